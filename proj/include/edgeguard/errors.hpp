#pragma once

#include <stdexcept>
#include <string>

namespace edgeguard {

// Root of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad network definition, missing weights, incompatible shapes, bad options.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed or unreadable input data (files, labels, frames).
class DataError : public Error {
 public:
  using Error::Error;
};

// Weight file load failures. Each cause has its own type so callers can
// tell a foreign file from a damaged one.
class WeightFormatError : public DataError {
 public:
  using DataError::DataError;
};
class BadMagicError : public WeightFormatError {
 public:
  using WeightFormatError::WeightFormatError;
};
class TruncatedFileError : public WeightFormatError {
 public:
  using WeightFormatError::WeightFormatError;
};
class DuplicateNameError : public WeightFormatError {
 public:
  using WeightFormatError::WeightFormatError;
};

// Input that has no meaningful result, e.g. normalizing a zero vector.
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

// Image too small for the 12x12 proposal window.
class NoFacePossibleError : public Error {
 public:
  using Error::Error;
};

class TrainingDivergedError : public Error {
 public:
  using Error::Error;
};

// A documented invariant failed at runtime. Always a bug.
class InvariantViolation : public Error {
 public:
  using Error::Error;
};

}  // namespace edgeguard
