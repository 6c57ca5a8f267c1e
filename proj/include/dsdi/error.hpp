#pragma once

#include <stdexcept>
#include <string>

namespace dsdi {

/// Bad configuration value or CLI usage. CLI exit code 2.
class ConfigError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Malformed or unusable input data. CLI exit code 3.
class DataError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Non-finite loss, divergence, or another numerical breakdown. CLI exit code 4.
class NumericError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

}  // namespace dsdi
