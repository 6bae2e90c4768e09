#pragma once

#include <iosfwd>

namespace ttnlab {

/// Entry point of the `ttnlab` command line tool. Returns 0 on success, 1 on
/// usage errors and 2 when the library reports a data or format error.
/// Output goes to `out`, diagnostics to `err`.
int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace ttnlab
