#pragma once

#include <stdexcept>
#include <string>

namespace blurmap {

// Base of every error thrown by the library. The CLI maps subclasses to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor/grid dimensions disagree with an operation's contract.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration value (width multiplier, upsample factor, sigma, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed or inconsistent input data (labels, missing masks, empty corpus).
class DataError : public Error {
 public:
  using Error::Error;
};

// API misuse such as consuming a layer cache twice.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Weight container cannot be parsed or does not match the requested topology.
class WeightFormatError : public DataError {
 public:
  using DataError::DataError;
};

// Non-finite values appeared during training or evaluation.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace blurmap
