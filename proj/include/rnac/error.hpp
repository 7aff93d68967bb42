#pragma once

#include <stdexcept>
#include <string>

namespace rnac {

// Base for all library errors.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Box/scene arguments are malformed (non-finite, non-positive extent, ...).
struct GeometryError : Error {
  using Error::Error;
};

// Tensor shapes do not conform.
struct ShapeError : Error {
  using Error::Error;
};

// A computation produced NaN/Inf.
struct NumericError : Error {
  using Error::Error;
};

// Caller violated an API contract (bad id, wrong count, non-scalar loss...).
struct UsageError : Error {
  using Error::Error;
};

// Operation applied in the wrong object state (e.g. stepping a done episode).
struct LifecycleError : Error {
  using Error::Error;
};

// Configuration file/value problems; message names the offending key.
struct ConfigError : Error {
  using Error::Error;
};

// Malformed external file (trace, checkpoint).
struct FormatError : Error {
  using Error::Error;
};

// Checkpoint does not match the compiled architecture.
struct VersionError : Error {
  using Error::Error;
};

// Filesystem failures, annotated with the path.
struct IoError : Error {
  using Error::Error;
};

}  // namespace rnac
