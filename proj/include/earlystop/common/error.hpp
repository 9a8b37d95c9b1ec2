#pragma once

#include <stdexcept>
#include <string>

namespace earlystop {

// Root of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Errors caused by bad input, configuration or data. The CLI maps these to
// exit code 2; everything else is an internal failure (exit code 1).
class InvalidInput : public Error {
 public:
  using Error::Error;
};

class DimensionError : public InvalidInput {
 public:
  using InvalidInput::InvalidInput;
};

class DomainError : public InvalidInput {
 public:
  using InvalidInput::InvalidInput;
};

class ConfigError : public InvalidInput {
 public:
  using InvalidInput::InvalidInput;
};

class DataError : public InvalidInput {
 public:
  using InvalidInput::InvalidInput;
};

class LabelError : public InvalidInput {
 public:
  using InvalidInput::InvalidInput;
};

class RankError : public InvalidInput {
 public:
  using InvalidInput::InvalidInput;
};

class IoError : public InvalidInput {
 public:
  using InvalidInput::InvalidInput;
};

class CompatibilityError : public InvalidInput {
 public:
  using InvalidInput::InvalidInput;
};

class StateError : public Error {
 public:
  using Error::Error;
};

class LifecycleError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace earlystop
