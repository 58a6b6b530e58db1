#pragma once

#include <stdexcept>
#include <string>

namespace ncsr {

/// Bad input: violated preconditions, malformed configs, inconsistent shapes.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A computation failed while running (non-finite values, missing files, ...).
class RuntimeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw ValidationError(message);
}

}  // namespace ncsr
