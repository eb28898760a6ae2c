#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "mcaoan/fdiff.hpp"
#include "mcaoan/rng.hpp"
#include "mcaoan/tape.hpp"
#include "mcaoan/tensor.hpp"

namespace testutil {

using mcaoan::Rng;
using mcaoan::Shape;
using mcaoan::Tape;
using mcaoan::Tensor;

inline Tensor<double> rand_tensor(Rng& rng, Shape shape, double lo = -1.0,
                                  double hi = 1.0) {
  Tensor<double> t = Tensor<double>::zeros(std::move(shape));
  for (std::int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

// Values bounded away from zero, for ops with a kink at the origin.
inline Tensor<double> rand_tensor_nonzero(Rng& rng, Shape shape,
                                          double margin = 0.1) {
  Tensor<double> t = Tensor<double>::zeros(std::move(shape));
  for (std::int64_t i = 0; i < t.size(); ++i) {
    const double mag = rng.uniform(margin, 1.0);
    t[i] = rng.bernoulli(0.5) ? mag : -mag;
  }
  return t;
}

inline double max_abs_diff(const std::vector<double>& a,
                           const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  return max_abs_diff(*a.data, *b.data);
}

// Backward pass against central finite differences. `fwd` rebuilds the
// scalar loss from scratch on the given tape, watching each leaf itself.
// Returns the worst relative error over every leaf coordinate.
inline double grad_check(
    const std::function<Tensor<double>(Tape<double>&)>& fwd,
    std::vector<Tensor<double>*> leaves, double eps = 1e-5) {
  Tape<double> tape;
  Tensor<double> loss = fwd(tape);
  tape.backward(loss);

  const auto f = [&]() {
    Tape<double> t;
    t.set_recording(false);
    return fwd(t).item();
  };

  double worst = 0.0;
  for (Tensor<double>* leaf : leaves) {
    const std::vector<double> ad = tape.grad_of(*leaf);
    const std::vector<double> fd = mcaoan::finite_diff_grad(
        f, std::span<double>(leaf->data->data(), leaf->data->size()), eps);
    for (std::size_t i = 0; i < ad.size(); ++i)
      worst = std::max(worst, mcaoan::grad_rel_err(ad[i], fd[i]));
  }
  return worst;
}

}  // namespace testutil
