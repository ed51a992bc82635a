#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace pglab {

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitViolation = 2, kExitNumeric = 3 };

/// Runs one pglab command line; args excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace pglab
