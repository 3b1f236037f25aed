#pragma once

#include <stdexcept>
#include <string>

namespace abft {

/// Base class of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operands whose shapes do not fit together.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A precondition on a scalar argument or configuration was violated.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Erasure or error pattern that the checksum scheme cannot undo.
class UncorrectableError : public Error {
 public:
  using Error::Error;
};

/// Misuse of the simulated runtime (e.g. respawning a live rank).
class ProtocolError : public Error {
 public:
  using Error::Error;
};

/// Parameter fitting could not produce an answer.
class FitError : public Error {
 public:
  using Error::Error;
};

}  // namespace abft
