#pragma once

#include <cmath>
#include <vector>

#include "cel/autograd.hpp"
#include "cel/ops.hpp"

// Probability-space losses with mean reduction. Inputs are post-sigmoid maps
// clamped to [eps, 1-eps]; targets are strictly binary. Pointwise math runs
// in double regardless of T.

namespace cel {

namespace detail {

template <class T>
void check_loss_inputs(const VarT<T>& p, const TensorT<T>& y) {
  check(p.shape() == y.shape, cat("loss: prediction ", shape_str(p.shape()),
                                  " vs target ", shape_str(y.shape)));
  check(p.val().numel() > 0, "loss: empty input");
  for (int64_t i = 0; i < p.val().numel(); ++i)
    if (std::isnan(static_cast<double>(p.val()[i]))) fail("loss: NaN in prediction");
  for (int64_t i = 0; i < y.numel(); ++i)
    check(y[i] == T(0) || y[i] == T(1), "loss: target must be binary");
}

inline double clampp(double p, double eps) {
  return p < eps ? eps : (p > 1.0 - eps ? 1.0 - eps : p);
}

}  // namespace detail

template <class T>
VarT<T> bce_loss(const VarT<T>& p, const TensorT<T>& y, double eps = 1e-7) {
  detail::check_loss_inputs(p, y);
  const int64_t n = p.val().numel();
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double pc = detail::clampp(static_cast<double>(p.val()[i]), eps);
    acc -= y[i] == T(1) ? std::log(pc) : std::log(1.0 - pc);
  }
  TensorT<T> out(Shape{1}, static_cast<T>(acc / static_cast<double>(n)));
  auto yt = std::make_shared<TensorT<T>>(y);
  return make_op<T>(std::move(out), {p}, [p, yt, eps, n](NodeT<T>& n_) {
    const double g = static_cast<double>(n_.grad[0]) / static_cast<double>(n);
    T* dp = p.grad().data();
    for (int64_t i = 0; i < n; ++i) {
      const double pv = static_cast<double>(p.val()[i]);
      if (pv < eps || pv > 1.0 - eps) continue;  // clamp plateau
      dp[i] += static_cast<T>(g * (pv - static_cast<double>((*yt)[i])) / (pv * (1.0 - pv)));
    }
  });
}

template <class T>
VarT<T> focal_loss(const VarT<T>& p, const TensorT<T>& y, double gamma = 2.0,
                   double alpha_pos = 0.75, double eps = 1e-7) {
  detail::check_loss_inputs(p, y);
  check(gamma >= 0.0, "focal_loss: gamma must be >= 0");
  check(alpha_pos > 0.0 && alpha_pos < 1.0, "focal_loss: alpha_pos must be in (0,1)");
  const int64_t n = p.val().numel();
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double pc = detail::clampp(static_cast<double>(p.val()[i]), eps);
    const bool pos = y[i] == T(1);
    const double pt = pos ? pc : 1.0 - pc;
    const double at = pos ? alpha_pos : 1.0 - alpha_pos;
    acc -= at * std::pow(1.0 - pt, gamma) * std::log(pt);
  }
  TensorT<T> out(Shape{1}, static_cast<T>(acc / static_cast<double>(n)));
  auto yt = std::make_shared<TensorT<T>>(y);
  return make_op<T>(std::move(out), {p}, [p, yt, gamma, alpha_pos, eps, n](NodeT<T>& n_) {
    const double g = static_cast<double>(n_.grad[0]) / static_cast<double>(n);
    T* dp = p.grad().data();
    for (int64_t i = 0; i < n; ++i) {
      const double pv = static_cast<double>(p.val()[i]);
      if (pv < eps || pv > 1.0 - eps) continue;
      const bool pos = (*yt)[i] == T(1);
      const double pt = pos ? pv : 1.0 - pv;
      const double at = pos ? alpha_pos : 1.0 - alpha_pos;
      double d = gamma > 0.0 ? gamma * std::pow(1.0 - pt, gamma - 1.0) * std::log(pt) : 0.0;
      d -= std::pow(1.0 - pt, gamma) / pt;
      d *= at;
      dp[i] += static_cast<T>(g * (pos ? d : -d));
    }
  });
}

// Deep-supervision hybrid: sum over outputs of alpha_k * (bce_k + focal_k),
// all against the same target.
template <class T>
VarT<T> hybrid_loss(const std::vector<VarT<T>>& outs, const TensorT<T>& y,
                    const std::vector<double>& alphas, double gamma = 2.0,
                    double alpha_pos = 0.75, double eps = 1e-7) {
  check(!outs.empty(), "hybrid_loss: no outputs");
  check(alphas.size() == outs.size(), cat("hybrid_loss: ", alphas.size(), " weights for ",
                                          outs.size(), " outputs"));
  VarT<T> total;
  for (size_t k = 0; k < outs.size(); ++k) {
    VarT<T> term = ops::add(bce_loss(outs[k], y, eps), focal_loss(outs[k], y, gamma, alpha_pos, eps));
    term = ops::scale(term, static_cast<T>(alphas[k]));
    total = total.defined() ? ops::add(total, term) : term;
  }
  return total;
}

struct LossConfig {
  std::vector<double> alpha_k;  // empty means "all ones at validate(K)"
  double focal_gamma = 2.0;
  double focal_alpha_pos = 0.75;
  double epsilon = 1e-7;

  // K is the supervised output count of the consuming network (6 or 9).
  std::vector<double> weights_for(size_t k) const {
    if (alpha_k.empty()) return std::vector<double>(k, 1.0);
    check(alpha_k.size() == k, cat("loss: ", alpha_k.size(), " alpha weights for ", k, " outputs"));
    return alpha_k;
  }

  void validate() const {
    for (double a : alpha_k) check(a >= 0, "loss: alpha_k must be nonnegative");
    check(focal_gamma >= 0, "loss: focal_gamma must be nonnegative");
    check(focal_alpha_pos > 0 && focal_alpha_pos < 1, "loss: focal_alpha_pos must be in (0,1)");
    check(epsilon > 0 && epsilon < 0.5, "loss: epsilon must be in (0,0.5)");
  }
};

template <class T>
VarT<T> hybrid_loss(const std::vector<VarT<T>>& outs, const TensorT<T>& y, const LossConfig& cfg) {
  cfg.validate();
  return hybrid_loss(outs, y, cfg.weights_for(outs.size()), cfg.focal_gamma, cfg.focal_alpha_pos,
                     cfg.epsilon);
}

}  // namespace cel
