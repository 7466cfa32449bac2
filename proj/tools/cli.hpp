#pragma once

#include <ostream>

namespace wr2l::cli {

// Exit codes: 0 success, 1 runtime failure, 2 bad usage or configuration.
inline constexpr int kOk = 0;
inline constexpr int kRuntimeError = 1;
inline constexpr int kConfigError = 2;

// Environment variable naming the root for relative output directories.
inline constexpr const char* kOutputRootEnv = "WR2L_OUTPUT_ROOT";

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace wr2l::cli
