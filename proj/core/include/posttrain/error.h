#pragma once

#include <stdexcept>
#include <string>

namespace posttrain {

// Malformed input data, missing files or unreadable formats.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Violated operation preconditions (bad shapes, bad arguments).
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Non-finite values produced during training.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace posttrain
