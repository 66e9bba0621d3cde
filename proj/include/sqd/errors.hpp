#pragma once

#include <stdexcept>
#include <string>

namespace sqd {

/// Malformed or inconsistent input (scenario files, flags, out-of-contract arguments).
class ConfigError : public std::invalid_argument {
 public:
  explicit ConfigError(const std::string& what) : std::invalid_argument(what) {}
};

/// An iterative routine stopped without meeting its tolerance.
class ConvergenceError : public std::runtime_error {
 public:
  explicit ConvergenceError(const std::string& what) : std::runtime_error(what) {}
};

/// A combinatorial or wall-clock budget was exceeded.
class BudgetExceeded : public std::runtime_error {
 public:
  explicit BudgetExceeded(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {

inline void require(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError(msg);
}

}  // namespace detail
}  // namespace sqd
