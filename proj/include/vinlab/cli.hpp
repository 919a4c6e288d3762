#pragma once

#include <ostream>

namespace vinlab {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Entry point of the `vinlab` command: generate, train, eval, rl, plot,
/// gradcheck. Returns the process exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace vinlab
