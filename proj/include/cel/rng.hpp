#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace cel {

// Deterministic RNG. mt19937_64 gives a standardized bit stream; the
// transforms below are hand-rolled because std:: distributions are
// implementation-defined and would break cross-compiler reproducibility.
class Rng {
 public:
  explicit Rng(uint64_t seed) : g_(seed) {}

  uint64_t next_u64() { return g_(); }

  // [0, 1)
  double uniform() { return static_cast<double>(g_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // inclusive bounds
  int64_t uniform_int(int64_t lo, int64_t hi) {
    uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    return lo + static_cast<int64_t>(g_() % span);
  }

  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform(), u2 = uniform();
    while (u1 <= 1e-300) u1 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  template <class T>
  void shuffle(std::vector<T>& xs) {
    for (size_t i = xs.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(uniform_int(0, static_cast<int64_t>(i) - 1));
      std::swap(xs[i - 1], xs[j]);
    }
  }

  // Decorrelated child stream (splitmix64 over seed and stream id).
  static uint64_t mix(uint64_t seed, uint64_t stream) {
    uint64_t z = seed + 0x9e3779b97f4a7c15ull * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

 private:
  std::mt19937_64 g_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace cel
