#pragma once

#include <iostream>

namespace infosculpt {

/// Entry point of the `infosculpt` tool. Exit codes: 0 success, 1 runtime
/// failure (I/O, non-finite loss, failed check), 2 usage error.
int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr);

}  // namespace infosculpt
