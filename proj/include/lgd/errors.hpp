#pragma once

#include <stdexcept>
#include <string>

namespace lgd {

/// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes or dimensions.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Argument outside the mathematical domain of an operation (e.g. BCE target not in [0,1]).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Index or time step outside its valid range.
class RangeError : public Error {
 public:
  using Error::Error;
};

/// API misuse, e.g. calling backward twice on a consumed graph.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration (bad step counts, empty corpora, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed or unknown user input (unknown class ids, bad image files).
class InputError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values produced by a forward op, or a broken internal invariant.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Checkpoint / file decoding failure.
class LoadError : public Error {
 public:
  using Error::Error;
};

}  // namespace lgd
