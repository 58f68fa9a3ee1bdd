#pragma once

#include <stdexcept>
#include <string>

namespace softdsgd {

// Every failure raised by the library derives from Error so callers can map
// the category onto a process exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Parameters outside their documented domain (n < 2, k outside (0,1), ...).
class InvalidConfiguration : public Error {
 public:
  using Error::Error;
};

// Shape mismatches and malformed matrices passed to a pure function.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// Non-finite values, or an iterative method that did not reach its tolerance.
class NumericalFailure : public Error {
 public:
  using Error::Error;
};

// Exhaustive enumeration requested beyond the supported size.
class CapacityError : public Error {
 public:
  using Error::Error;
};

// A reliable-delivery link with zero success probability.
class NonTerminatingRetransmission : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace softdsgd
