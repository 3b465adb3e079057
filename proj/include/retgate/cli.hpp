#pragma once

#include <span>
#include <string>

namespace retgate {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Runs the command-line tool. `args` excludes the program name.
int run_cli(std::span<const std::string> args);

}  // namespace retgate
