#pragma once

#include <string>
#include <vector>

namespace mtcl {

// Entry point for the command-line harness. Exit codes: 0 success, 1
// configuration error, 2 data error, 3 training/runtime failure.
int run_cli(const std::vector<std::string>& args);
int run_cli(int argc, char** argv);

}  // namespace mtcl
