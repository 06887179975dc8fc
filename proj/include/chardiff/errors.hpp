#pragma once

#include <stdexcept>
#include <string>

namespace chardiff {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad shapes / invalid op arguments.
struct ShapeError : Error {
  using Error::Error;
};

// Bad CLI usage or config contents (exit code 1).
struct UsageError : Error {
  using Error::Error;
};

// Missing/corrupt files, malformed manifests (exit code 2).
struct DataError : Error {
  using Error::Error;
};

// NaN/Inf encountered in training or sampling (exit code 3).
struct NumericError : Error {
  using Error::Error;
};

}  // namespace chardiff
