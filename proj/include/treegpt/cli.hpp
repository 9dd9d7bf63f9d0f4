#pragma once

// Operator surface. Subcommands: gen-data, train, eval, gradcheck, ablate.
// Exposed as a library function so tests can drive the exact production code
// paths in-process.
//
// Exit codes: 0 success, 1 usage/config error, 2 runtime/numeric error.

#include <string>
#include <vector>

namespace treegpt::cli {

int run(const std::vector<std::string>& args);

}  // namespace treegpt::cli
