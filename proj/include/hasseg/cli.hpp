#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace hasseg::cli {

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kConfigError = 2,  // bad flags, config values or semantically invalid inputs
  kIoError = 3,
  kNumericError = 4,
  kInterrupted = 5,
};

/// Runs `hasseg <subcommand> ...`; args excludes the program name. Never throws.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Case id of a manifest image path: file stem without a trailing "_image".
std::string case_id(const std::string& image_path);

}  // namespace hasseg::cli
