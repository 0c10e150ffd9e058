#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace iontrap::cli {

/// Exit codes shared by every subcommand.
enum ExitCode : int {
  kOk = 0,
  kUsage = 1,         // bad flags or invalid input values
  kNotConfining = 2,  // no confining minimum, or a transport step that fails verification
  kIo = 3,            // unreadable or malformed input file, unwritable output
  kInfeasible = 4,    // inverse problem without an acceptable solution
};

/// Runs one command line (arguments without the program name). Diagnostics
/// go to `err` as a single line starting with "error:".
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace iontrap::cli
