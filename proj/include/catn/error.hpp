#pragma once

#include <stdexcept>
#include <string>

namespace catn {

// Shape or extent mismatch between operands.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// An operation was asked to reduce over nothing.
class EmptyInputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class RankError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Inconsistent model/run configuration, detected before any work is done.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Numerically undefined result: fully masked softmax, coincident centroids,
// constant inputs to a correlation.
class DegenerateError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Malformed or unreadable input file.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class UnsupportedArchitectureError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Training produced a non-finite loss.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace catn
