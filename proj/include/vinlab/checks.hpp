#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vinlab/weights.hpp"

namespace vinlab {

struct CheckResult {
  std::string name;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  std::size_t coords = 0;
  bool passed() const { return max_rel_error < tolerance; }
};

inline constexpr double kOpTolerance = 1e-6;
inline constexpr double kModelTolerance = 1e-4;

/// Finite-difference checks of every differentiable operator on random
/// 64-bit inputs.
std::vector<CheckResult> op_gradchecks(std::uint64_t seed);

struct ModelCheckOptions {
  ModelFamily family = ModelFamily::vin;
  int size = 4;
  int k = 0;       // 0 keeps the family default
  int k_high = 0;  // hierarchical only; 0 selects max(1, k / 2)
  std::uint64_t seed = 1;
  /// Coordinates per tensor; 0 checks all of them when the model is small
  /// (at most 20000 parameters) and 64 per tensor otherwise.
  std::size_t coords = 0;
};

/// Full-model cross-entropy check on a few expert samples of a random map.
CheckResult model_gradcheck_result(const ModelCheckOptions& options);

}  // namespace vinlab
