#pragma once

#include <stdexcept>
#include <string>

namespace uood {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input file. `line()` is 1-based, 0 when not line-oriented.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line = 0)
      : Error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Inputs inconsistent with an operation's contract (dimension, missing field, range).
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// A numerical procedure failed (non-SPD matrix, collapse, NaN in training).
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace uood
