#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace d3hr::cli {

enum ExitCode : int { kSuccess = 0, kUsage = 1, kValidation = 2, kIo = 3 };

/// Runs one invocation; args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace d3hr::cli
