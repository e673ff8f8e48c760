#pragma once

#include <stdexcept>
#include <string>

namespace jointscen {

/// Bad input detected before any computation (shape, range, file contents).
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A numerical procedure failed to produce a usable answer.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace jointscen
