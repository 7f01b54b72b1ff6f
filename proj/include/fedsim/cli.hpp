#pragma once

#include <iosfwd>

namespace fedsim {

/// Entry point of the `fedsim` tool. Returns 0 on success, 2 on configuration
/// or parse errors and 1 on runtime failures.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace fedsim
