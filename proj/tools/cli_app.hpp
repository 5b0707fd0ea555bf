#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace emrank::cli {

/// Entry point of the `emrank` tool: generate, judge, stats, serve, validate.
/// Returns the process exit status; nonzero only when a command produced no
/// usable output.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

/// Convenience overload for tests.
int run(const std::vector<std::string>& args, std::ostream& out,
        std::ostream& err);

}  // namespace emrank::cli
