#pragma once

#include <stdexcept>
#include <string>

namespace vrga {

// Input that violates a documented contract (bad shapes, out-of-range
// values, malformed files). The CLI maps this to exit code 1.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Index or argument outside the valid range of a container.
class RangeError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// Filesystem failures while reading or writing containers.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A numerical procedure left its domain (e.g. training loss became NaN).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace vrga
