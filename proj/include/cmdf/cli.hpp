#pragma once

#include <map>
#include <ostream>
#include <string>
#include <vector>

namespace cmdf::cli {

enum ExitCode : int {
  kOk = 0,
  kUsage = 2,     // bad flags or invalid input data
  kNumeric = 3,   // non-finite loss or gradient
  kArtifact = 4,  // missing or malformed checkpoint / dataset file
};

/// Flat `key = value` file; `#` starts a comment. Throws ValidationError
/// with the line number on a malformed line or a repeated key.
std::map<std::string, std::string> parse_config_text(const std::string& text, const std::string& source);

/// Runs one subcommand (gen, train, eval, project, ablate). args excludes the
/// program name. Reports go to `out`, diagnostics and the resolved config to
/// `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace cmdf::cli
