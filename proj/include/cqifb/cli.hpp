#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace cqifb::cli {

/// Exit codes: 0 ok, 1 configuration/usage error, 2 missing file, 3 internal failure.
enum ExitCode : int { kOk = 0, kConfigError = 1, kMissingFile = 2, kInternalError = 3 };

/// Runs one command line (args[0] is the program name). Errors go to `err` as "ERROR <code>: ...".
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace cqifb::cli
