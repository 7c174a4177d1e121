#pragma once

#include <stdexcept>
#include <string>

namespace fsc {

/// Base of every exception thrown by the library. The subclasses name the
/// failure category; the command-line tool maps them onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor or vector dimensions do not line up.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Caller-supplied data is outside the accepted domain (empty text, pixel
/// outside [0,1], token id out of range, ...).
class InputError : public Error {
 public:
  using Error::Error;
};

/// Inconsistent configuration, including fingerprint mismatches.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// API misuse: missing noise stream, empty training set, zero MC samples.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// A computation produced NaN or Inf.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Mathematical domain violation (sigma <= 0, no positive labels, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Malformed file contents.
class ParseError : public Error {
 public:
  using Error::Error;
};

}  // namespace fsc
