#pragma once

#include <stdexcept>
#include <string>

namespace qfm {

// Base for every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes are incompatible with the requested operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A forward result contained NaN or Inf.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Input for which the quantity is mathematically undefined (zero norm, zero
// variance, empty memory, ...).
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

class TrainingError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed file contents (checkpoint, manifest, image).
class FormatError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace qfm
