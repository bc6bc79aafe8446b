// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace gmbm {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes are incompatible.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Input lies where the math is undefined (zero-norm vectors and similar).
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

/// Class or attribute index outside its range.
class IndexError : public Error {
 public:
  using Error::Error;
};

/// Caller violated an operation precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Not enough samples to evaluate a statistic.
class InsufficientSupportError : public Error {
 public:
  using Error::Error;
};

/// Requested configuration exceeds what the generator can render.
class CapacityError : public Error {
 public:
  using Error::Error;
};

/// Configuration value is invalid or unparseable.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// File contents do not follow the expected layout.
class SchemaError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace gmbm
