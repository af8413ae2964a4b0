#pragma once

#include <stdexcept>
#include <string>

namespace htad {

// Malformed or inconsistent input data (unknown ids, schema violations).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration or call arguments.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape mismatch or non-finite values inside the numerics layer.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace htad
