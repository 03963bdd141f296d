#pragma once

// Central finite-difference checks for the reverse-mode engine.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "codebrain/numerics/tensor.hpp"

namespace codebrain::num {

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
};

inline double relative_gap(double analytic, double numeric) {
  return std::abs(analytic - numeric) / (std::abs(analytic) + std::abs(numeric) + 1e-8);
}

// Compares tape gradients of `loss_fn` with central differences over every
// coordinate of every tensor in `params`. `loss_fn` must read the params by
// reference and return a scalar.
template <class T>
GradCheckResult finite_diff_check_params(const std::function<Tensor<T>()>& loss_fn, std::vector<Tensor<T>> params,
                                         double eps) {
  for (auto& p : params) {
    p.zero_grad();
    p.set_requires_grad(true);
  }
  {
    Tape<T> tape;
    tape.backward(loss_fn());
  }
  GradCheckResult res;
  std::size_t flat = 0;
  for (auto& p : params) {
    auto values = p.mutable_data();
    const std::vector<T> analytic = p.has_grad() ? std::vector<T>(p.grad().begin(), p.grad().end())
                                                 : std::vector<T>(p.size(), T(0));
    for (std::size_t i = 0; i < values.size(); ++i, ++flat) {
      const T saved = values[i];
      values[i] = static_cast<T>(saved + eps);
      const double up = loss_fn().item();
      values[i] = static_cast<T>(saved - eps);
      const double down = loss_fn().item();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double gap = relative_gap(analytic[i], numeric);
      if (gap > res.max_relative_error) {
        res.max_relative_error = gap;
        res.worst_index = flat;
      }
      ++res.checked;
    }
  }
  return res;
}

// Single-input form: fn maps a tensor shaped like `point` to a scalar.
template <class T>
double finite_diff_check(const std::function<Tensor<T>(const Tensor<T>&)>& fn, const Tensor<T>& point,
                         double eps) {
  Tensor<T> x = point.clone(true);
  return finite_diff_check_params<T>([&] { return fn(x); }, {x}, eps).max_relative_error;
}

}  // namespace codebrain::num
