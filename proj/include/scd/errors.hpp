#pragma once

#include <stdexcept>
#include <string>

namespace scd {

// Root of every domain error raised by the library. The CLI maps anything
// derived from this to exit code 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor extents that do not fit together.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// A parameter or configuration value outside its admissible range.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A caller broke a documented precondition (non-scalar loss, missing grad...).
class ContractError : public Error {
 public:
  using Error::Error;
};

// Not enough usable data to compute something: too few points, an all-masked
// batch, a rank-deficient covariance.
class DegenerateError : public Error {
 public:
  using Error::Error;
};

// A NaN or Inf appeared in a tensor op output or an optimizer update.
class NonFiniteError : public Error {
 public:
  using Error::Error;
};

class LoadError : public Error {
 public:
  using Error::Error;
};

class LookupError : public Error {
 public:
  using Error::Error;
};

// The pair graph cannot be brought into one frame.
class AlignmentError : public Error {
 public:
  using Error::Error;
};

class GenerationError : public Error {
 public:
  using Error::Error;
};

}  // namespace scd
