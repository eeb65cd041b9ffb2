#pragma once

#include <stdexcept>
#include <string>

namespace curvlink {

// Invalid configuration, spec or arguments. Maps to CLI exit code 1.
class ConfigError : public std::invalid_argument {
 public:
  explicit ConfigError(const std::string& what) : std::invalid_argument(what) {}
};

// Non-finite values, divergence, failed fits. Maps to CLI exit code 2.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

class NotFoundError : public std::out_of_range {
 public:
  explicit NotFoundError(const std::string& what) : std::out_of_range(what) {}
};

// Raised when a model subset needed for an expectation is empty.
class InsufficientModelsError : public std::runtime_error {
 public:
  InsufficientModelsError(const std::string& what, int with_count, int without_count)
      : std::runtime_error(what), with_count_(with_count), without_count_(without_count) {}
  int with_count() const { return with_count_; }
  int without_count() const { return without_count_; }

 private:
  int with_count_;
  int without_count_;
};

class CalibrationError : public ConfigError {
 public:
  CalibrationError(const std::string& what, double lo, double hi)
      : ConfigError(what), lo_(lo), hi_(hi) {}
  double bracket_lo() const { return lo_; }
  double bracket_hi() const { return hi_; }

 private:
  double lo_;
  double hi_;
};

class FitError : public NumericError {
 public:
  explicit FitError(const std::string& what) : NumericError(what) {}
};

}  // namespace curvlink
