#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace ctok {

// Exit codes shared by every subcommand.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;  // bad flags, config or spec
inline constexpr int kExitNotConverged = 2;
inline constexpr int kExitToken = 3;  // token missing, corrupt or incompatible

// Entry point of the ctok tool; args excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ctok
