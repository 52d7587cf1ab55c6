#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace qdpillar::cli {

enum ExitCode : int { ok = 0, invalid = 1, failure = 2, usage = 64 };

/// Runs one command line. Console summaries go to `out`, diagnostics and
/// progress to `err`. Never throws.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace qdpillar::cli
