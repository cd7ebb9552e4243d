#pragma once

#include <string>
#include <vector>

namespace tpn {

// Exit codes of the command-line tool.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;  // missing/corrupt data or checkpoint, failed check

// args excludes the program name.
int run_cli(const std::vector<std::string>& args);
int run_cli(int argc, char** argv);

}  // namespace tpn
