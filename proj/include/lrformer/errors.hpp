#pragma once

#include <stdexcept>

namespace lrf {

// Root of every error the library throws. The CLI maps the concrete type to
// an exit code.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// Invalid architecture or operator configuration (divisibility, unknown names).
class ConfigError : public Error {
  public:
    using Error::Error;
};

// Tensor extents that do not fit together.
class DimensionError : public Error {
  public:
    using Error::Error;
};

// API misuse, e.g. backward on a non-scalar.
class UsageError : public Error {
  public:
    using Error::Error;
};

// Malformed files (weights, PPM/PGM).
class FormatError : public Error {
  public:
    using Error::Error;
};

// Well-formed input whose values are unacceptable (labels out of range).
class DataError : public Error {
  public:
    using Error::Error;
};

// NaN/Inf produced, or a numerical self-check failed.
class NumericalError : public Error {
  public:
    using Error::Error;
};

}  // namespace lrf
