#pragma once

#include <iosfwd>

namespace sci::cli {

// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kUsage = 1;  // usage and configuration errors
inline constexpr int kData = 2;   // data, format, shape and codec errors
inline constexpr int kNumeric = 3;

// Runs one subcommand. The JSON summary goes to `out`, diagnostics to `err`.
int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace sci::cli
