#pragma once

#include <stdexcept>
#include <string>

namespace parnet {

/// Failure categories; the CLI maps each to its own exit code.
enum class ErrorCategory { Config, Data, Io, Internal };

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& message)
      : std::runtime_error(message), category_(category) {}

  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& message) : Error(ErrorCategory::Config, message) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& message) : Error(ErrorCategory::Data, message) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& message) : Error(ErrorCategory::Io, message) {}
};

/// Raised on any shape disagreement; the message names the operation and
/// both operand shapes.
class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& message) : Error(ErrorCategory::Internal, message) {}
};

int exit_code(ErrorCategory category) noexcept;

}  // namespace parnet
