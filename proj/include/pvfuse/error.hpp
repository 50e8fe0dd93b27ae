#pragma once

#include <stdexcept>
#include <string>

namespace pvfuse {

// Malformed, misaligned or otherwise unusable input data.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Calibration container failed integrity verification (bad trailer, CRC mismatch, truncation).
class ChecksumError : public DataError {
 public:
  using DataError::DataError;
};

class UnsupportedVersionError : public DataError {
 public:
  using DataError::DataError;
};

// A statistic that needs spread (variance, range) met constant input.
class DegenerateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Argument outside the mathematical domain of a function. Kept as std::domain_error
// so callers can catch the standard type.
using DomainError = std::domain_error;

}  // namespace pvfuse
