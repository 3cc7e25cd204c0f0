#pragma once

#include <stdexcept>
#include <string>

namespace windgrid {

// Base of the project's error taxonomy. The CLI maps ConfigError, InputError,
// UsageError, FormatError, CheckpointError, OutOfDomainError and TrainingError
// to exit code 1 and NumericError to exit code 2.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : Error {
  using Error::Error;
};

struct InputError : Error {
  using Error::Error;
};

struct UsageError : Error {
  using Error::Error;
};

struct OutOfDomainError : Error {
  using Error::Error;
};

struct ShapeError : Error {
  using Error::Error;
};

struct NumericError : Error {
  using Error::Error;
};

struct FormatError : Error {
  using Error::Error;
};

struct CheckpointError : Error {
  using Error::Error;
};

struct TrainingError : Error {
  using Error::Error;
};

}  // namespace windgrid
