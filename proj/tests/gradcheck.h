#pragma once

// Central finite-difference oracle for autodiff checks. Test-only: it touches
// nothing but the forward values of the function under test.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "latentplan/tensor.h"

namespace latentplan::testing {

using ScalarFn = std::function<Tensor<double>(const std::vector<Tensor<double>>&)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
};

inline double rel_error(double a, double n) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-6});
}

// Compares autodiff gradients of fn w.r.t. every input that requires grad
// with central differences of step h. `points` = 5 uses the fourth-order
// stencil, which tolerates a larger h (less roundoff on large losses).
inline GradCheckResult grad_check(const ScalarFn& fn, std::vector<Tensor<double>> inputs,
                                  double h = 1e-5, int points = 3) {
  for (auto& t : inputs) t.zero_grad();
  Tensor<double> out = fn(inputs);
  backward(out);
  GradCheckResult result;
  for (auto& t : inputs) {
    if (!t.requires_grad()) continue;
    std::vector<double> analytic(t.values().size(), 0.0);
    if (t.has_grad()) analytic.assign(t.grad().begin(), t.grad().end());
    for (size_t i = 0; i < analytic.size(); ++i) {
      const double saved = t.values()[i];
      auto at = [&](double offset) {
        t.values()[i] = saved + offset;
        return fn(inputs).item();
      };
      const double numeric =
          points == 5 ? (8 * (at(h) - at(-h)) - (at(2 * h) - at(-2 * h))) / (12 * h)
                      : (at(h) - at(-h)) / (2 * h);
      t.values()[i] = saved;
      result.max_rel_error = std::max(result.max_rel_error, rel_error(analytic[i], numeric));
      result.max_abs_error = std::max(result.max_abs_error, std::abs(analytic[i] - numeric));
    }
  }
  return result;
}

}  // namespace latentplan::testing
