#pragma once

#include <iostream>
#include <string>
#include <vector>

namespace actseg::cli {

/// Runs one subcommand (args excludes the program name). Returns 0 on
/// success, 1 on a validation error and 2 on an internal failure; errors go
/// to `err` as a single `error: kind=... message="..."` line.
int run_command(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr);

}  // namespace actseg::cli
