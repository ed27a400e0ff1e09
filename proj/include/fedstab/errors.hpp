#pragma once

#include <stdexcept>
#include <string>

namespace fedstab {

// Invalid input or configuration; the CLI maps it to exit status 2.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A numerical self-check failed (e.g. an eigensolve lost accuracy).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Training produced a non-finite parameter; the CLI maps it to exit status 3.
class DivergenceError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

}  // namespace fedstab
