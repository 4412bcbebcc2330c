#pragma once

// Command-line front end. Exit codes: 0 ok, 2 usage/input error,
// 3 validation findings, 4 data/integrity failure, 5 remote failure.

#include <ostream>
#include <string>
#include <vector>

namespace fakg {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitFindings = 3;
inline constexpr int kExitData = 4;
inline constexpr int kExitRemote = 5;

// args excludes the program name. Machine output goes to out; logs and
// errors go to err.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace fakg
