#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace sfbd::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kRuntime = 2 };

// args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace sfbd::cli
