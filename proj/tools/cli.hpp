#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace tppkit::cli {

// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kUsage = 1;
inline constexpr int kNumeric = 2;

// args excludes the program name. Summaries go to `out`, diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace tppkit::cli
