#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace calign {

inline constexpr int kExitOk = 0;
inline constexpr int kExitDomain = 1;
inline constexpr int kExitUsage = 2;

/// Runs one CLI invocation. `args` excludes the program name. `in` feeds the
/// interactive annotate flow.
int cli_main(const std::vector<std::string>& args, std::istream& in, std::ostream& out, std::ostream& err);

}  // namespace calign
