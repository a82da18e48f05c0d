#pragma once

#include <stdexcept>
#include <string>

namespace mpt {

// Typed failure conditions. Estimation-level errors (everything except
// ConfigError/SchemaError) are recoverable data conditions: a Monte Carlo
// replication that throws one is counted and skipped, not a program fault.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Kernel denominator below the effective-count floor at the requested point.
struct InsufficientLocalData : Error {
  using Error::Error;
};

// Cholesky pivot ratio below tolerance; downstream this signals a failed
// rank condition / weak identification.
struct SingularMatrix : Error {
  using Error::Error;
};

struct WeakIdentification : Error {
  using Error::Error;
};

// Trimmed support S0(X) is empty or degenerate.
struct EmptyTrimmedSupport : Error {
  using Error::Error;
};

// Malformed input data (CSV schema violations), with cell location.
struct SchemaError : Error {
  using Error::Error;
};

// Invalid configuration (bad JSON, contradictory options).
struct ConfigError : Error {
  using Error::Error;
};

struct InvalidArgument : Error {
  using Error::Error;
};

}  // namespace mpt
