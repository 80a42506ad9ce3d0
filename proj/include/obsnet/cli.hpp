#pragma once

#include <string>
#include <vector>

namespace obsnet::cli {

/// Runs the command-line front end. Exit codes: 0 all checks pass, 1 a
/// hypothesis or stability check is certified failed, 2 malformed input,
/// 3 constructive search exhausted its budget (not a nonexistence proof).
int run(const std::vector<std::string>& args);
int run(int argc, const char* const* argv);

}  // namespace obsnet::cli
