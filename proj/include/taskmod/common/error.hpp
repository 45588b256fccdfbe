// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace taskmod {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class UnknownOpError : public Error {
 public:
  using Error::Error;
};

class UnboundLeafError : public Error {
 public:
  using Error::Error;
};

class NonScalarLossError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed or truncated binary/JSON artifacts.
class FormatError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// A loss or parameter became non-finite during training.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

// Two artifacts (runs, reports) that cannot be compared.
class IncompatibleError : public Error {
 public:
  using Error::Error;
};

}  // namespace taskmod
