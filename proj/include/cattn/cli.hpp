#pragma once

#include <string>
#include <vector>

namespace cattn {

// Entry point behind the cattn binary; also callable from tests.
// Subcommands: gen-synth, train, eval, analyze.
// Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric error.
int run_cli(const std::vector<std::string>& args);

}  // namespace cattn
