#pragma once
#include <string>
#include <vector>

namespace ccsd {

// Command-line entry point. Exit codes: 0 success, 1 validation error (the
// message names the offending flag or key), 2 runtime failure.
int cli_run(const std::vector<std::string>& args);
int cli_main(int argc, char** argv);

}  // namespace ccsd
