#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace twnids {

// base for every error raised by the toolkit
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// schema mapping or schema file problems (missing column, bad unit, ...)
class SchemaError : public Error {
 public:
  using Error::Error;
};

// a single malformed input row; carries the 1-based physical line number
class RowError : public Error {
 public:
  RowError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

// input stream not sorted by timestamp
class OrderingError : public Error {
 public:
  OrderingError(std::size_t index, const std::string& what)
      : Error("record " + std::to_string(index) + ": " + what), index_(index) {}
  std::size_t index() const noexcept { return index_; }

 private:
  std::size_t index_;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// experiment protocol preconditions (e.g. no shared attack classes)
class ProtocolError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

class InvariantError : public Error {
 public:
  using Error::Error;
};

}  // namespace twnids
