#pragma once

#include <stdexcept>
#include <string>

namespace emoint {

// Shapes disagree (keypoint counts, feature widths, embedding sizes).
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A value lies outside the domain an operation accepts (non-finite input,
// intensity outside [0,1], level outside {1,2,3}).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Sequences that must share a time axis do not.
class AlignmentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Neutral reference does not belong to the sequence's identity, or is absent.
class ReferenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class MissingReferenceError : public ReferenceError {
 public:
  using ReferenceError::ReferenceError;
};

// An operation has no well-defined answer for its input: zero-scale
// normalization, zero-vector direction, empty mask, single-class probe.
class DegenerateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class CapacityError : public std::length_error {
 public:
  using std::length_error::length_error;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InsufficientDataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace emoint
