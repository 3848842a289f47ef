#pragma once

#include <stdexcept>
#include <string>

namespace countfuse {

// Bad user input: malformed files, inconsistent dimensions, invalid specs.
// The CLI maps this to exit code 2.
class input_error : public std::runtime_error {
 public:
  explicit input_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Numerical failure: factorization breakdown, optimizer non-convergence,
// non-finite intermediates. The CLI maps this to exit code 3.
class numeric_error : public std::runtime_error {
 public:
  explicit numeric_error(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace countfuse
