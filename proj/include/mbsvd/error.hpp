#pragma once

#include <stdexcept>
#include <string>

namespace mbsvd {

// Process exit codes shared by the command-line front end.
enum class ExitCode : int {
  ok = 0,
  input_error = 1,
  config_error = 2,
  numerical_error = 3,
};

/// Base for every error raised by the library. Carries the exit code a
/// command should terminate with when the error escapes to the top level.
class Error : public std::runtime_error {
 public:
  Error(const std::string& what, ExitCode code) : std::runtime_error(what), code_(code) {}
  ExitCode code() const noexcept { return code_; }

 private:
  ExitCode code_;
};

/// Malformed input data. `line()` is 1-based, or 0 when not line-specific.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error(line ? "line " + std::to_string(line) + ": " + what : what, ExitCode::input_error),
        line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class UnknownBehaviorError : public Error {
 public:
  UnknownBehaviorError(const std::string& name, ExitCode code = ExitCode::input_error)
      : Error("unknown behavior '" + name + "'", code), name_(name) {}
  const std::string& name() const noexcept { return name_; }

 private:
  std::string name_;
};

class EmptyDatasetError : public Error {
 public:
  EmptyDatasetError() : Error("dataset contains no interactions", ExitCode::input_error) {}
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& what) : Error("shape mismatch: " + what, ExitCode::config_error) {}
};

class IndexError : public Error {
 public:
  explicit IndexError(const std::string& what) : Error("index out of range: " + what, ExitCode::config_error) {}
};

/// Invalid numeric input such as NaN entries handed to a decomposition.
class ValueError : public Error {
 public:
  explicit ValueError(const std::string& what) : Error(what, ExitCode::numerical_error) {}
};

/// Bad configuration or parameter combination.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(what, ExitCode::config_error) {}
};

/// Missing or inconsistent state (absent artifacts, corrupt checkpoints).
class StateError : public Error {
 public:
  explicit StateError(const std::string& what) : Error(what, ExitCode::config_error) {}
};

/// Non-finite loss or gradient encountered during training.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(what, ExitCode::numerical_error) {}
};

}  // namespace mbsvd
