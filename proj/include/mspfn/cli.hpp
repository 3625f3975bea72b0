#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace mspfn::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kRuntime = 2 };

/// Runs the command line `args` (without the program name). Normal output
/// goes to `out`, diagnostics and usage text to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Compact scientific rendering used in run headers: 2e-4, 1.5e-3.
std::string format_sci(double v);

}  // namespace mspfn::cli
