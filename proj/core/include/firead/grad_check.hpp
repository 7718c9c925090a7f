#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "firead/tensor.hpp"

namespace firead {

struct GradCheckOptions {
  double epsilon = 1e-6;
  /// 0 checks every element; otherwise at most this many elements per
  /// parameter, chosen with `sample_seed`.
  std::int64_t max_elements_per_param = 0;
  std::uint64_t sample_seed = 0x5eed;
  /// Step halvings allowed per element. An element whose central difference
  /// disagrees with the analytic gradient by more than `consistency` is
  /// measured again at h/2, h/4, ... until two successive estimates agree to
  /// `consistency` (the difference has converged) or the budget is spent. The
  /// last estimate is reported. This catches steps that straddle a kink
  /// (relu, max); a wrong analytic gradient still fails at every step.
  int refinements = 0;
  double consistency = 1e-7;
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::int64_t elements_checked = 0;
  std::size_t worst_param = 0;
  std::int64_t worst_element = -1;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  /// Elements that were measured again with a smaller step.
  std::int64_t refined_elements = 0;
};

/// Per-element relative error |a - n| / max(1e-8, |a| + |n|).
double relative_error(double analytic, double numeric);

/// Compares reverse-mode gradients of `objective` with central differences
/// (f(p+eps) - f(p-eps)) / 2eps, element by element, and returns the maximum
/// relative error. `objective` must be pure and return a (1,1,1,1) tensor.
/// Throws NumericError if the objective is ever non-finite.
GradCheckResult grad_check(const std::function<Tensor<double>()>& objective, std::vector<Tensor<double>> params,
                           const GradCheckOptions& options = {});

/// Same check with the central differences taken on `reference`, an
/// extended-precision replica of `objective` over `reference_params`
/// (same shapes and values). The analytic side stays 64-bit; the replica only
/// lowers the rounding noise of the finite differences.
GradCheckResult grad_check(const std::function<Tensor<double>()>& objective, std::vector<Tensor<double>> params,
                           const std::function<Tensor<long double>()>& reference,
                           std::vector<Tensor<long double>> reference_params, const GradCheckOptions& options = {});

/// Fixed pseudo-random linear functional sum_i r_i * y_i with r_i in [-1, 1).
/// Avoids the degenerate plain sum after batch statistics, whose gradient
/// vanishes identically, and keeps the objective small so finite differences
/// carry little rounding noise.
template <typename T>
Tensor<T> random_projection(const Tensor<T>& y, std::uint64_t seed);

extern template Tensor<double> random_projection(const Tensor<double>&, std::uint64_t);
extern template Tensor<long double> random_projection(const Tensor<long double>&, std::uint64_t);

}  // namespace firead
