#pragma once

#include <stdexcept>

namespace drrff {

// Invalid or inconsistent configuration (dimensions, hyper-parameters, methods).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor or signal shape does not match what an operation expects.
class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input is mathematically degenerate: all-zero signal, zero-norm embedding.
class DegenerateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace drrff
