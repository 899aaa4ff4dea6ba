#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace uatr {

inline constexpr const char* kToolVersion = "0.1.0";

/// Exit codes: 0 success, 1 user or configuration error, 2 numeric or
/// internal error.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace uatr
