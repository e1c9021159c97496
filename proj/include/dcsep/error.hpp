#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace dcsep {

// Base of every error the engine throws. Callers that only care about
// "something went wrong" catch this; the subclasses carry the category.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class UnsupportedError : public Error {
 public:
  using Error::Error;
};

class StateError : public Error {
 public:
  using Error::Error;
};

class InsufficientEvidenceError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Malformed binary input. `offset` is the byte position where parsing failed.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

class UnsupportedVersionError : public FormatError {
 public:
  UnsupportedVersionError(unsigned found, unsigned expected, std::size_t offset)
      : FormatError("unsupported model version " + std::to_string(found) +
                        " (expected " + std::to_string(expected) + ")",
                    offset),
        found_(found) {}
  unsigned found() const noexcept { return found_; }

 private:
  unsigned found_;
};

}  // namespace dcsep
