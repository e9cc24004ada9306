#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace sfbd {

struct GradCheckResult {
  std::string name;
  std::size_t coordinates = 0;
  double max_rel_error = 0.0;
};

inline constexpr double kGradCheckTolerance = 1e-4;
inline constexpr double kGradCheckStep = 1e-5;

/// Central-difference audit of every loss and the adapted-model objective on
/// small random instances. MMD bandwidths are fixed here because the median
/// heuristic is a stop-gradient constant during training.
std::vector<GradCheckResult> run_gradient_suite(std::uint64_t seed);

}  // namespace sfbd
