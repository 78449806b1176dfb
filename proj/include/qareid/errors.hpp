#pragma once

#include <stdexcept>
#include <string>

namespace qareid {

// Bad configuration detected before any work starts. CLI maps this to exit 2.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Inconsistent inputs (shape mismatch, label out of range, ...). Exit 2.
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// File could not be read or written. Exit 2 when it concerns inputs,
// 3 when it happens mid-run.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Training produced a non-finite loss. Exit 3.
class TrainingDiverged : public std::runtime_error {
 public:
  explicit TrainingDiverged(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace qareid
