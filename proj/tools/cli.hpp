#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace msafeb::cli {

enum ExitCode : int { ok = 0, usage = 1, data = 2, numeric = 3 };

/// Runs one command line (without the program name). Human-readable text
/// and key=value result lines go to `out`, diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace msafeb::cli
