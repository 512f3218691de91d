#pragma once

#include <stdexcept>
#include <string>

namespace advecg {

// Shape or argument contract violated by the caller.
class ShapeError : public std::invalid_argument {
   public:
    using std::invalid_argument::invalid_argument;
};

// NaN/Inf produced where finite output is required, or a diverging loop.
class NumericalError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

// Malformed, truncated or mismatched on-disk artifact.
class FormatError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

// Input that is well formed but cannot be processed (empty cohort, single-class set, ...).
class InvalidInput : public std::invalid_argument {
   public:
    using std::invalid_argument::invalid_argument;
};

}  // namespace advecg
