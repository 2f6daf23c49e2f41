#pragma once

// Central finite-difference gradient checker.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "despeckle/errors.hpp"

namespace despeckle {

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t worst_index = 0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
};

inline double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

/// Compares `analytic` against (f(x+h) - f(x-h)) / 2h coordinate by
/// coordinate. `loss_fn` is invoked as loss_fn(std::span<const double>).
template <typename LossFn>
GradCheckResult finite_diff_check(LossFn&& loss_fn, std::span<const double> point,
                                  std::span<const double> analytic, double step) {
  if (!(step > 0.0)) throw ConfigError("finite_diff_check: step must be > 0");
  if (analytic.size() != point.size())
    throw ShapeError("finite_diff_check: gradient length " + std::to_string(analytic.size()) +
                     " differs from point length " + std::to_string(point.size()));
  std::vector<double> x(point.begin(), point.end());
  GradCheckResult result;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + step;
    const double up = loss_fn(std::span<const double>(x));
    x[i] = saved - step;
    const double down = loss_fn(std::span<const double>(x));
    x[i] = saved;
    if (!std::isfinite(up) || !std::isfinite(down))
      throw NumericError("finite_diff_check: non-finite loss at coordinate " + std::to_string(i));
    const double numeric = (up - down) / (2.0 * step);
    const double err = relative_error(analytic[i], numeric);
    if (i == 0 || err > result.max_relative_error)
      result = {err, i, analytic[i], numeric};
  }
  return result;
}

}  // namespace despeckle
