#pragma once

#include <stdexcept>
#include <string>

namespace protobag {

// Error taxonomy. The CLI maps ConfigError (and command-line usage errors)
// to exit code 1 and everything else to exit code 2.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IndexError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace protobag
