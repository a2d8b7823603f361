#pragma once

namespace protobag {

// Full command-line entry point (generate | train | explain | evaluate).
// Returns the process exit code: 0 ok, 1 usage/config error, 2 runtime/data
// error. Tests drive it directly with argv vectors.
int run_cli(int argc, const char* const* argv);

}  // namespace protobag
