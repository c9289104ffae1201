#pragma once

#include <stdexcept>
#include <string>

namespace rdrl {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input: bad shapes, probabilities that do not sum to one, ...
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// A mathematical precondition does not hold (e.g. absolute continuity).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Requested radius lies outside the region where a construction is valid.
class FeasibilityError : public Error {
 public:
  using Error::Error;
};

/// An enumeration would exceed its configured size cap.
class SizeError : public Error {
 public:
  using Error::Error;
};

/// Fixed-point iteration failed to reach tolerance within its cap.
class ConvergenceError : public Error {
 public:
  using Error::Error;
};

/// Non-finite simulator state or network output.
class NumericFault : public Error {
 public:
  using Error::Error;
};

/// Config parsing / validation failure.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace rdrl
