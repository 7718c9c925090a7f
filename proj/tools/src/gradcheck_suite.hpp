#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace firead::tools {

struct GradUnitResult {
  std::string scope;
  std::string name;
  double max_relative_error = 0;
  double threshold = 0;
  std::int64_t elements = 0;
  double worst_analytic = 0;
  double worst_numeric = 0;
  bool passed = false;
  /// Set when the unit threw instead of producing a result.
  std::string error;
};

inline constexpr double kUnitThreshold = 1e-5;
inline constexpr double kModelThreshold = 1e-4;
/// Initial central-difference step, its allowed halvings and the agreement
/// required between successive estimates.
inline constexpr double kEpsilon = 1e-5;
inline constexpr int kRefinements = 4;
inline constexpr double kConsistency = 1e-6;

/// "primitives", "blocks", "model".
const std::vector<std::string>& gradcheck_scopes();

/// 64-bit gradients checked against finite differences evaluated on an
/// extended-precision replica of each unit. Units that throw are reported as
/// failed with an infinite error.
std::vector<GradUnitResult> run_gradcheck(const std::string& scope, std::uint64_t seed,
                                          const std::function<void(const GradUnitResult&)>& on_result = {},
                                          double epsilon = kEpsilon);

}  // namespace firead::tools
