#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace lirank {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class DimensionMismatch : public Error {
 public:
  DimensionMismatch(std::size_t expected, std::size_t actual)
      : Error("dimension mismatch: expected " + std::to_string(expected) + ", got " +
              std::to_string(actual)),
        expected_(expected),
        actual_(actual) {}

  std::size_t expected() const { return expected_; }
  std::size_t actual() const { return actual_; }

 private:
  std::size_t expected_;
  std::size_t actual_;
};

class NotFound : public Error {
 public:
  using Error::Error;
};

enum class FormatErrorKind {
  Io,
  MalformedLine,
  DuplicateId,
  BadMagic,
  UnsupportedVersion,
  Truncated,
  RecordCountMismatch,
  PayloadMismatch,
};

const char* to_string(FormatErrorKind kind);

/// Raised by every reader/writer in io_formats and by the binary snapshot loaders.
/// `line()` is 1-based for text formats and 0 when not applicable.
class FormatError : public Error {
 public:
  FormatError(FormatErrorKind kind, const std::string& message, std::size_t line = 0)
      : Error(std::string(to_string(kind)) + ": " + message), kind_(kind), line_(line) {}

  FormatErrorKind kind() const { return kind_; }
  std::size_t line() const { return line_; }

 private:
  FormatErrorKind kind_;
  std::size_t line_;
};

}  // namespace lirank
