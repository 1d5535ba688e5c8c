#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>

namespace unisp {

/// Coarse failure classes. The CLI maps each one to an exit status.
enum class ErrorCategory {
  kConfig,     // malformed configuration or flag values
  kInput,      // missing or unreadable inputs
  kInvariant,  // contract violation inside the library
  kParse,      // ill-formed program token sequence
  kExecution,  // program could not be executed against a knowledge base
};

std::string_view to_string(ErrorCategory category);

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
  explicit ConfigError(const std::string& message) : Error(ErrorCategory::kConfig, message) {}
};

class InputError : public Error {
 public:
  explicit InputError(const std::string& message) : Error(ErrorCategory::kInput, message) {}
};

class ContractViolation : public Error {
 public:
  explicit ContractViolation(const std::string& message)
      : Error(ErrorCategory::kInvariant, message) {}
};

class ParseError : public Error {
 public:
  ParseError(std::size_t position, const std::string& message)
      : Error(ErrorCategory::kParse, message + " (at token " + std::to_string(position) + ")"),
        position_(position) {}

  /// Index of the first offending token.
  std::size_t position() const noexcept { return position_; }

 private:
  std::size_t position_;
};

class ExecutionError : public Error {
 public:
  explicit ExecutionError(const std::string& message)
      : Error(ErrorCategory::kExecution, message) {}
};

inline std::string_view to_string(ErrorCategory category) {
  switch (category) {
    case ErrorCategory::kConfig: return "config";
    case ErrorCategory::kInput: return "input";
    case ErrorCategory::kInvariant: return "invariant";
    case ErrorCategory::kParse: return "parse";
    case ErrorCategory::kExecution: return "execution";
  }
  return "unknown";
}

}  // namespace unisp
