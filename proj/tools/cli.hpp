#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace dynlat::cli {

// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kVerifyFailed = 1;
inline constexpr int kBadArguments = 2;
inline constexpr int kValidation = 3;

/// Runs the command line `args` (without the program name). CSV goes to
/// `out` unless --out is given; diagnostics go to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace dynlat::cli
