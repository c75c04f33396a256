#pragma once

#include <stdexcept>
#include <string>

namespace ppm {

/// Malformed or inconsistent input data (CSV parse failures, bad splits,
/// window requests that do not fit the series).
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Numeric failure during training or evaluation (non-finite loss,
/// invalid bandwidth, degenerate configuration).
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Configuration rejected before any work started (unknown key, value out
/// of range, shape mismatch against a checkpoint).
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace ppm
