#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace canopy::cli {

/// Stable process exit codes.
enum ExitCode : int {
    exit_ok = 0,
    exit_config = 2,
    exit_io = 3,
    exit_predictor = 4,
    exit_internal = 5,
};

/// Runs one `canopy` invocation. `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace canopy::cli
