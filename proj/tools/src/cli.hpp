#pragma once

#include <cstdint>
#include <iosfwd>

namespace firead::tools {

/// Process exit codes of the `firead` tool.
enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 1,       // bad flags or arguments
  kExitConfig = 2,      // invalid model configuration
  kExitIo = 3,          // unreadable, unwritable or malformed files
  kExitCheck = 4,       // gradcheck failure
  kExitDivergence = 5,  // training loss became non-finite
};

/// Seed used when --seed is not given.
inline constexpr std::uint64_t kDefaultSeed = 7;

/// Entry point shared by main() and the tests. Reports go to `out` unless
/// --out redirects them; diagnostics go to `err`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace firead::tools
