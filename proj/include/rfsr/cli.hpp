#pragma once

namespace rfsr {

// Entry point of the rfsr command-line tool. Returns 0 on success, 1 on a
// usage or configuration error and 2 on a runtime failure.
int run_cli(int argc, const char* const* argv);

}  // namespace rfsr
