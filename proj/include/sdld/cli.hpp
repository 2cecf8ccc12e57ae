#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace sdld::cli {

enum ExitCode : int { kOk = 0, kUsage = 2, kDataError = 3, kEstimationError = 4 };

/// Runs one subcommand (simulate, discover, estimate, replicate). `args`
/// excludes the program name. Errors are reported as a single JSON line on `err`.
int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace sdld::cli
