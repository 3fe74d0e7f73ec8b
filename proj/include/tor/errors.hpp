#pragma once

#include <stdexcept>
#include <string>

namespace tor {

// Base for every engine error. Subclasses map to CLI exit codes in tools/.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration: bad config keys, incompatible shapes at graph build.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// API precondition violated by the caller.
class UsageError : public Error {
 public:
  using Error::Error;
};

// Non-finite value produced where finiteness is required.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Rollout batch and parameters disagree on the behavior snapshot version.
class StalenessError : public Error {
 public:
  using Error::Error;
};

// Checkpoint file unreadable or from an incompatible engine/format version.
class CheckpointError : public Error {
 public:
  using Error::Error;
};

// Every rollout group was removed by dynamic sampling, twice in a row.
class DegenerateBatchError : public Error {
 public:
  using Error::Error;
};

// Rank correlation requested on a zero-variance list.
class UndefinedCorrelationError : public Error {
 public:
  using Error::Error;
};

}  // namespace tor
