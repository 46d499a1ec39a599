#pragma once

#include <stdexcept>
#include <string>

namespace pnr {

// Base class for all library failures. Subclasses map 1:1 onto the CLI
// exit-code classes, so keep them disjoint.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible matrix shapes.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Cholesky factorization hit a non-positive (or numerically zero) pivot.
class SingularityError : public Error {
 public:
  SingularityError(const std::string& what, int pivot_index)
      : Error(what), pivot_index(pivot_index) {}

  int pivot_index = -1;
};

// A stated precondition or callback contract was violated.
class ContractError : public Error {
 public:
  using Error::Error;
};

// File / stream problems, including malformed PNRM/PNRC payloads.
class IoError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration (bad key, bad value, inconsistent mode).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace pnr
