#pragma once

#include <stdexcept>
#include <string>

namespace clasp {

// Base of every error the library throws. The CLI maps subclasses onto
// process exit codes (see exit_code()).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual int exit_code() const noexcept { return 3; }
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

// Violated precondition of an operation (non-scalar loss, empty mask, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf produced by a primitive, a non-finite gradient or loss.
class NumericError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 4; }
};

class ConfigError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 2; }
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Binary container errors. Each failure mode has its own type so callers can
// tell a foreign file from a damaged one.
class FormatError : public Error {
 public:
  using Error::Error;
};

class MagicError : public FormatError {
 public:
  using FormatError::FormatError;
};

class VersionError : public FormatError {
 public:
  using FormatError::FormatError;
};

class TruncatedError : public FormatError {
 public:
  using FormatError::FormatError;
};

class ChecksumError : public FormatError {
 public:
  using FormatError::FormatError;
};

// Malformed text input (CSV, manifest, config); carries the line number.
class ParseError : public FormatError {
 public:
  ParseError(const std::string& source, std::size_t line, const std::string& what)
      : FormatError(source + ":" + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace clasp
