#pragma once

#include <stdexcept>
#include <string>

namespace mscale {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input file or record.
class ParseError : public Error {
 public:
  using Error::Error;
};

/// Arguments or configuration violate a precondition.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Numerical failure while training (non-finite loss, gradient or parameter).
class TrainingFault : public Error {
 public:
  using Error::Error;
};

}  // namespace mscale
