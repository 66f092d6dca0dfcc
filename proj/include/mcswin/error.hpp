#pragma once

#include <stdexcept>
#include <string>

namespace mcswin {

/// Base for every error raised by the library. Each subclass maps onto one
/// CLI exit code (see tools/mcswin.cpp).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Inputs violate a documented precondition or invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// File header is not one we understand (magic, version).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// File is truncated or its payload fails integrity checks.
class CorruptionError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values in a loss, activation or metric.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Phantom structures could not be placed within the requested grid.
class GenerationError : public Error {
 public:
  using Error::Error;
};

/// Configuration text could not be parsed or names an unknown key.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A checkpoint does not match the configuration it is loaded against.
class CheckpointMismatchError : public Error {
 public:
  using Error::Error;
};

}  // namespace mcswin
