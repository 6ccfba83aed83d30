#ifndef MILSEG_GRADCHECK_HPP
#define MILSEG_GRADCHECK_HPP

#include "milseg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <type_traits>
#include <vector>

namespace milseg {

struct FiniteDiffOptions {
  double epsilon = 1e-5;
  /// Relative errors are |a - n| / max(|a|, |n|, floor). The floor keeps
  /// near-zero gradients from turning round-off into huge ratios.
  double denominator_floor = 1e-3;
  /// Coordinates to probe; empty means all of them.
  std::vector<Index> coordinates;
};

struct FiniteDiffReport {
  double max_relative_error = 0.0;
  Index worst_coordinate = -1;
  Index checked = 0;
  Index skipped = 0;
};

inline double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Compares `analytic` against central differences of `loss` taken by
/// perturbing `params` in place (each coordinate is restored afterwards).
///
/// `loss` is either `double()` or `std::optional<double>()`; an empty
/// optional marks the perturbed point as non-differentiable (a ReLU kink or
/// pooling tie was crossed) and the coordinate is skipped.
template <typename LossFn>
FiniteDiffReport finite_diff_check(LossFn&& loss, std::span<double> params, std::span<const double> analytic,
                                   const FiniteDiffOptions& opts = {}) {
  if (params.size() != analytic.size()) throw ShapeError("finite_diff_check: gradient length mismatch");
  std::vector<Index> coords = opts.coordinates;
  if (coords.empty()) {
    coords.resize(params.size());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = static_cast<Index>(i);
  }
  auto eval = [&]() -> std::optional<double> {
    if constexpr (std::is_convertible_v<std::invoke_result_t<LossFn&>, double>) {
      return static_cast<double>(loss());
    } else {
      return loss();
    }
  };

  FiniteDiffReport report;
  for (Index c : coords) {
    double& w = params[static_cast<std::size_t>(c)];
    const double saved = w;
    w = saved + opts.epsilon;
    const auto plus = eval();
    w = saved - opts.epsilon;
    const auto minus = eval();
    w = saved;
    if (!plus || !minus) {
      ++report.skipped;
      continue;
    }
    const double numeric = (*plus - *minus) / (2.0 * opts.epsilon);
    const double err = relative_error(analytic[static_cast<std::size_t>(c)], numeric, opts.denominator_floor);
    ++report.checked;
    if (report.worst_coordinate < 0 || err > report.max_relative_error) {
      report.max_relative_error = err;
      report.worst_coordinate = c;
    }
  }
  return report;
}

}  // namespace milseg

#endif  // MILSEG_GRADCHECK_HPP
