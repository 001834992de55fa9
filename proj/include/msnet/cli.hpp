#pragma once

#include <ostream>
#include <string>
#include <string_view>
#include <vector>

namespace msnet::cli {

inline constexpr std::string_view kVersion = "0.1.0";

/// Runs one subcommand. `args` excludes the program name. Returns 0 on
/// success, 1 on a library error (validation, format, I/O) and 2 on a usage
/// error. Summaries go to `out`, diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace msnet::cli
