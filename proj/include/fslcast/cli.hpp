#pragma once

#include <iosfwd>
#include <string>

namespace fslcast::cli {

enum ExitCode : int { kOk = 0, kConfig = 2, kData = 3, kNumeric = 4 };

/// Runs the command line. Errors become one `error code=<n> kind=<k> message="..."`
/// line on `err` and a non-zero return.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

/// Help text of the top-level command followed by every subcommand.
std::string full_help();

}  // namespace fslcast::cli
