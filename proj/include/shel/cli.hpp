#pragma once

#include <iosfwd>

namespace shel {

/// Entry point of the `shel` tool. Subcommands: fit, simulate, infer.
/// Returns 0 on success, 2 on configuration errors, 3 on data errors and 4
/// when a numerical stage fails; messages go to `err`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace shel
