#pragma once

#include <stdexcept>
#include <string>

namespace pdx {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Violated precondition of an operation (bad argument, bad state).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Operand shapes do not conform for the named op.
class DimensionError : public ContractError {
 public:
  using ContractError::ContractError;
};

/// NaN or Inf produced by a forward op or a finite-difference probe.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Training loss blew up (see the divergence rule in training loops).
class DivergenceError : public Error {
 public:
  using Error::Error;
};

/// Invalid or unknown configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Checkpoint or dataset bytes fail validation (CRC, truncation, version).
class CorruptionError : public Error {
 public:
  using Error::Error;
};

}  // namespace pdx
