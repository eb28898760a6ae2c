#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "mcaoan/errors.hpp"

namespace mcaoan {

// Central-difference gradient (f(p+eps) - f(p-eps)) / 2eps per coordinate.
// `f` must be a deterministic function of `params` (dropout off, fixed
// inputs) and is re-evaluated with coordinates perturbed in place. 64-bit
// only: float headroom is too small for eps = 1e-5.
inline std::vector<double> finite_diff_grad(
    const std::function<double()>& f, std::span<double> params,
    double eps = 1e-5) {
  std::vector<double> grad(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double saved = params[i];
    params[i] = saved + eps;
    const double hi = f();
    params[i] = saved - eps;
    const double lo = f();
    params[i] = saved;
    if (!std::isfinite(hi) || !std::isfinite(lo))
      throw EvalError("finite_diff_grad: non-finite value at coordinate " +
                      std::to_string(i));
    grad[i] = (hi - lo) / (2.0 * eps);
  }
  return grad;
}

// Error metric used by every gradient check: absolute difference, relative
// to the gradient scale with a floor so near-zero gradients do not explode
// the ratio.
inline double grad_rel_err(double a, double b) {
  return std::abs(a - b) / std::max(1e-4, std::abs(a) + std::abs(b));
}

}  // namespace mcaoan
