#pragma once

#include <stdexcept>
#include <string>

namespace latentplan {

// Mismatched tensor or observation shapes.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Invalid or inconsistent configuration values.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// An API was called outside its preconditions.
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Input data failed a semantic check (e.g. not a probability vector).
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Value outside of its allowed domain (e.g. action index out of range).
class DomainError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

// Checkpoint manifest or blob is corrupt, truncated or mismatched.
class IntegrityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Attention context would exceed the positional-embedding capacity.
class CacheOverflowError : public std::length_error {
 public:
  using std::length_error::length_error;
};

// Not enough data to perform a training step; retry after collecting more.
class InsufficientDataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace latentplan
