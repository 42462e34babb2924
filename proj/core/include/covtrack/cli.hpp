#pragma once

#include <string>
#include <vector>

namespace covtrack::cli {

/// Command-line entry point: synth | train | track | eval | inspect-offsets.
/// Returns 0 on success, 1 on runtime failures (missing files, bad data),
/// 2 on usage errors.
int run(int argc, const char* const* argv);

/// Same, from an argument list without the program name.
int run(const std::vector<std::string>& args);

}  // namespace covtrack::cli
