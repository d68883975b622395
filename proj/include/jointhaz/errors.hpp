#pragma once

#include <stdexcept>
#include <string>

namespace jointhaz {

// Error taxonomy mirrors the CLI exit codes: usage -> 1, data -> 2,
// convergence -> 3. Library code throws; the CLI maps to codes.
struct UsageError : std::runtime_error {
  explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ConvergenceError : std::runtime_error {
  explicit ConvergenceError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace jointhaz
