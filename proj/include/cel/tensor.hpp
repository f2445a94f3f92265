#pragma once

#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace cel {

using Shape = std::vector<int64_t>;

inline int64_t numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

template <class... Args>
std::string cat(Args&&... args) {
  std::ostringstream os;
  (os << ... << args);
  return os.str();
}

[[noreturn]] inline void fail(const std::string& msg) { throw std::runtime_error(msg); }

inline void check(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

// Dense row-major tensor. Network tensors are [batch, channels, *spatial];
// masks and single maps drop the leading dims where noted.
template <class T>
struct TensorT {
  Shape shape;
  std::vector<T> v;

  TensorT() = default;
  explicit TensorT(Shape s) : shape(std::move(s)), v(static_cast<size_t>(cel::numel(shape)), T(0)) {}
  TensorT(Shape s, T value) : shape(std::move(s)), v(static_cast<size_t>(cel::numel(shape)), value) {}
  TensorT(Shape s, std::vector<T> data) : shape(std::move(s)), v(std::move(data)) {
    if (static_cast<int64_t>(v.size()) != cel::numel(shape))
      fail(cat("tensor: data size ", v.size(), " does not match shape ", shape_str(shape)));
  }

  int64_t numel() const { return static_cast<int64_t>(v.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  T* data() { return v.data(); }
  const T* data() const { return v.data(); }
  T& operator[](int64_t i) { return v[static_cast<size_t>(i)]; }
  const T& operator[](int64_t i) const { return v[static_cast<size_t>(i)]; }

  bool same_shape(const TensorT& o) const { return shape == o.shape; }

  void zero() { std::fill(v.begin(), v.end(), T(0)); }
  void fill(T x) { std::fill(v.begin(), v.end(), x); }

  template <class U>
  TensorT<U> cast() const {
    TensorT<U> out(shape);
    for (int64_t i = 0; i < numel(); ++i) out[i] = static_cast<U>(v[static_cast<size_t>(i)]);
    return out;
  }
};

using Tensor = TensorT<float>;
using DTensor = TensorT<double>;
using ByteTensor = TensorT<uint8_t>;

// Spatial part of a [B,C,*spatial] shape.
inline Shape spatial_of(const Shape& s) {
  check(s.size() >= 3, cat("expected [B,C,*spatial] shape, got ", shape_str(s)));
  return Shape(s.begin() + 2, s.end());
}

inline int64_t spatial_numel(const Shape& s) { return numel(spatial_of(s)); }

}  // namespace cel
