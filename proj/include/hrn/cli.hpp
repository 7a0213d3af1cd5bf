#pragma once

namespace hrn::cli {

// Entry point for the `hrn` binary; also called in-process by tests.
int run_cli(int argc, const char* const* argv);

}  // namespace hrn::cli
