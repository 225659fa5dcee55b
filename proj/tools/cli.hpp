#pragma once

#include <ostream>

namespace pedsynth::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

/// Parses the command line and runs one command. Never throws.
int run(int argc, const char *const *argv, std::ostream &out, std::ostream &err);

} // namespace pedsynth::cli
