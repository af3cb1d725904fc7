#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace ttx {

/// Entry point for the `ttx` command. Returns the process exit code.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ttx
