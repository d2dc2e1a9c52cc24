#pragma once

#include <stdexcept>
#include <string>

namespace flowids {

// Base type for everything thrown by this library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad flags, config keys, or out-of-range parameters. CLI exit code 1.
struct ConfigError : Error {
  using Error::Error;
};

// Malformed or missing data: CSV problems, labels, shapes, stage artifacts.
// CLI exit code 2.
struct DataError : Error {
  using Error::Error;
};

struct ShapeError : DataError {
  using DataError::DataError;
};

struct LabelError : DataError {
  using DataError::DataError;
};

struct CsvError : DataError {
  using DataError::DataError;
};

struct CheckpointError : DataError {
  using DataError::DataError;
};

struct EvalError : DataError {
  using DataError::DataError;
};

// Numerical failure while optimizing (non-finite loss or gradient).
// CLI exit code 3.
struct TrainingError : Error {
  using Error::Error;
};

}  // namespace flowids
