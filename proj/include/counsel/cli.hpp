#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace counsel {

/// Exit codes: 0 success or help, 1 usage error, 2 runtime failure.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

/// Subcommands: chat, serve, ingest, evaluate, experiment, refine.
/// `args` excludes the program name.
int cli_dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err, std::istream& in);

int cli_dispatch(int argc, char** argv, std::ostream& out, std::ostream& err, std::istream& in);

}  // namespace counsel
