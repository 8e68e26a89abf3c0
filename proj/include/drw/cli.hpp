#pragma once

#include <iosfwd>

namespace drw {

enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 1,
  kExitData = 2,
  kExitTooFewProbes = 3,
};

/// Entry point of the `drw` tool; argv[0] is the program name.
int run_cli(int argc, const char* const* argv, std::ostream& out,
            std::ostream& err);

}  // namespace drw
