#pragma once

#include <ostream>
#include <span>
#include <string>

namespace policyfx::cli {

/// Runs one command. `args` excludes the program name. Results go to files
/// and `out`; diagnostics go to `err`. Returns the process exit status.
int run(std::span<const std::string> args, std::ostream& out, std::ostream& err);

}  // namespace policyfx::cli
