#pragma once

#include <stdexcept>
#include <string>

namespace mtcl {

// Error taxonomy mirrors the CLI exit codes: config=1, data=2, training=3.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Invalid configuration: bad shapes, inconsistent flags, malformed config files.
struct ConfigError : Error {
  using Error::Error;
};

// Problems with manifests, volume files, or dataset construction.
struct DataError : Error {
  using Error::Error;
};

// Training-time failures (divergence, checkpoint I/O during a run).
struct TrainError : Error {
  using Error::Error;
};

// Non-finite values or degenerate numeric inputs, with the offending stage named.
struct NumericError : Error {
  using Error::Error;
};

}  // namespace mtcl
