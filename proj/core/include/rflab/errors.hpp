#pragma once

#include <stdexcept>
#include <string>

namespace rflab {

/// Base class for all rflab errors.
class Error : public std::runtime_error {
public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// A kernel or Gram matrix could not be factorized even at the maximum
/// jitter level. Usually signals duplicate or near-duplicate inputs.
class ConditioningFailure : public Error {
public:
  using Error::Error;
};

/// The test point lies in the span of the training features (r_perp ~ 0),
/// so the whitened test row w_perp is undefined.
class DegenerateTestPoint : public Error {
public:
  using Error::Error;
};

class DimensionMismatch : public Error {
public:
  using Error::Error;
};

/// Non-finite inputs or a linear solve that failed outright.
class SolverFailure : public Error {
public:
  using Error::Error;
};

/// A formula was requested outside its domain of validity (e.g. D <= N+1).
class InvalidRegime : public Error {
public:
  using Error::Error;
};

/// The estimated expected projection is not a contraction, so the
/// transformed-kernel construction is undefined.
class ContractionViolated : public Error {
public:
  using Error::Error;
};

/// Malformed input file; message carries row/column location.
class ParseError : public Error {
public:
  using Error::Error;
};

class InsufficientRows : public Error {
public:
  using Error::Error;
};

/// Invalid experiment or CLI configuration; message carries the field path.
class ConfigError : public Error {
public:
  using Error::Error;
};

}  // namespace rflab
