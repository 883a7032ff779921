#pragma once

#include <stdexcept>
#include <string>

namespace dgib {

// Root of every error thrown by the library. The CLI maps the concrete
// subclasses onto process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

// Raised when a primitive or loss component produces NaN/Inf.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Violated precondition on a call (non-scalar loss, missing gradient, label
// out of range, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed binary file (bad magic, truncation). Carries the byte offset in
// the message.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Malformed text input (CSV, JSON). Carries the line number in the message.
class ParseError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace dgib
