#pragma once

#include <stdexcept>
#include <string>

namespace cityprior {

// Malformed or inconsistent input data (bad manifest, truncated file,
// mismatched shapes). Maps to CLI exit code 2.
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Numerical failure during optimization or rendering (NaN loss, divergence).
// Maps to CLI exit code 3.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace cityprior
