#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace icudg {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible operand shapes in a matrix or graph operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Malformed input record; `line` is 1-based and counts the header.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// Well-formed input that violates a data contract (unknown concepts, orphan events, ...).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Experiment configuration rejected by schema validation; `path` is `section.key`.
class ConfigError : public Error {
 public:
  ConfigError(std::string path, const std::string& what)
      : Error(path.empty() ? what : path + ": " + what), path_(std::move(path)) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

/// An upstream artifact required by a pipeline command does not exist.
class MissingPrerequisite : public Error {
 public:
  using Error::Error;
};

/// Optimisation diverged (non-finite loss or gradient).
class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace icudg
