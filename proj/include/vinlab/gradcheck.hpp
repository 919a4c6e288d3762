#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "vinlab/tape.hpp"

namespace vinlab {

/// Builds a scalar on `tape` from leaves bound to `params` (one Var per tensor).
using ScalarFunction = std::function<Var(Tape<double>& tape, std::span<const Var> params)>;

struct GradCheckOptions {
  double eps = 1e-6;
  /// 0 checks every coordinate; otherwise a seeded random subset per tensor.
  std::size_t max_coords_per_tensor = 0;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_tensor = 0;
  std::size_t worst_index = 0;
  std::size_t coords_checked = 0;
};

/// Central finite differences against the tape gradient. The error of one
/// coordinate is |g_fd - g_ad| / max(1, |g_fd|, |g_ad|); the report holds the
/// maximum. `params` is perturbed in place and restored before returning.
GradCheckReport grad_check(std::vector<Tensor<double>>& params, const ScalarFunction& f,
                           const GradCheckOptions& options = {});

}  // namespace vinlab
