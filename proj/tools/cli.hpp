#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace modaldx::cli {

enum ExitCode : int { kSuccess = 0, kPartialFailure = 1, kConfigError = 2 };

/// Runs one subcommand; `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

/// p in (0, 1], nearest-rank on a copy of `values`.
double percentile(std::vector<double> values, double p);

}  // namespace modaldx::cli
