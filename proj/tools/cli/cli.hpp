#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace lirank::cli {

/// Exit codes shared by every subcommand.
enum ExitCode : int {
  kOk = 0,
  kUsage = 1,
  kInput = 2,
  kExternal = 3,
};

/// Runs one invocation. args[0] is the program name. Normal output goes to `out`,
/// diagnostics and the effective-config echo to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace lirank::cli
