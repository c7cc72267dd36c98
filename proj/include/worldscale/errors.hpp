#pragma once

#include <stdexcept>
#include <string>

namespace worldscale {

/// Base class for every error raised by the library. The CLI maps the
/// subclasses onto process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent input data (bad record, dangling reference,
/// out-of-range value). Messages name the offending record.
class DataError : public Error {
 public:
  using Error::Error;
};

/// A request that cannot be satisfied by the data, e.g. a covariate that
/// the pool does not carry.
class SpecError : public Error {
 public:
  using Error::Error;
};

/// An extrapolation task that cannot be rendered or resolved.
class TaskError : public Error {
 public:
  using Error::Error;
};

class NoAttempts : public DataError {
 public:
  using DataError::DataError;
};

/// A success probability of exactly zero has no finite difficulty level.
class InfiniteDifficulty : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

/// Provider could not be reached or kept failing after all retries.
class TransportError : public Error {
 public:
  using Error::Error;
};

/// Provider answered but declined to produce an estimate.
class RefusalError : public Error {
 public:
  using Error::Error;
};

class UsageError : public Error {
 public:
  using Error::Error;
};

}  // namespace worldscale
