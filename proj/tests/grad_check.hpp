#pragma once

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "cel/autograd.hpp"
#include "cel/ops.hpp"
#include "cel/rng.hpp"

// Central-difference gradient check in double. f() rebuilds the scalar loss
// from the leaves' current values, so perturbing leaf.val() in place and
// re-running f under NoGrad yields the finite-difference estimate.
template <class F>
void fd_gradcheck(std::vector<cel::DVar> leaves, F&& f, double h = 1e-5, double tol = 1e-6,
                  int max_per_leaf = 64, uint64_t seed = 7) {
  using namespace cel;
  for (auto& leaf : leaves) leaf.grad().zero();  // leaves may be reused across checks
  DVar loss = f();
  REQUIRE(loss.val().numel() == 1);
  backward(loss);
  Rng rng(seed);
  for (auto& leaf : leaves) {
    auto& lv = leaf.val();
    auto& lg = leaf.grad();
    const int64_t n = lv.numel();
    std::vector<int64_t> idx;
    if (n <= max_per_leaf) {
      idx.resize(static_cast<size_t>(n));
      std::iota(idx.begin(), idx.end(), 0);
    } else {
      for (int i = 0; i < max_per_leaf; ++i) idx.push_back(rng.uniform_int(0, n - 1));
      std::sort(idx.begin(), idx.end());
      idx.erase(std::unique(idx.begin(), idx.end()), idx.end());
    }
    for (int64_t i : idx) {
      const double keep = lv[i];
      double fp, fm;
      lv[i] = keep + h;
      {
        NoGrad ng;
        fp = f().val()[0];
      }
      lv[i] = keep - h;
      {
        NoGrad ng;
        fm = f().val()[0];
      }
      lv[i] = keep;
      const double fd = (fp - fm) / (2.0 * h);
      const double got = lg[i];
      const double ref = std::max({1.0, std::abs(fd), std::abs(got)});
      CHECK_MESSAGE(std::abs(fd - got) <= tol * ref,
                    "leaf idx ", i, ": fd=", fd, " autograd=", got);
    }
  }
}

// Reduces a tensor to a scalar through a fixed random weighting so that
// misrouted gradients cannot cancel the way they would under a plain mean.
template <class Fwd>
auto weighted_mean_of(Fwd&& fwd, cel::Rng& rng) {
  return [fwd = std::forward<Fwd>(fwd), wt = cel::DVar(), &rng]() mutable {
    cel::DVar y = fwd();
    if (!wt.defined()) {
      cel::DTensor w(y.shape());
      for (int64_t i = 0; i < w.numel(); ++i) w[i] = rng.uniform(0.5, 1.5);
      wt = cel::DVar(std::move(w), false);
    }
    return cel::ops::mean_all(cel::ops::mul(y, wt));
  };
}

inline void fill_uniform(cel::DTensor& t, cel::Rng& rng, double lo, double hi) {
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
}

// Magnitudes bounded away from zero so ReLU / max kinks sit far from the
// finite-difference step.
inline void fill_signed_away_from_zero(cel::DTensor& t, cel::Rng& rng, double lo = 0.1,
                                       double hi = 1.0) {
  for (int64_t i = 0; i < t.numel(); ++i)
    t[i] = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(lo, hi);
}
