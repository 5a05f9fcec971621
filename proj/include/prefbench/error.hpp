#pragma once

#include <stdexcept>
#include <string>

namespace prefbench {

// All library failures derive from Error so callers can catch one type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid or inconsistent configuration (bad grid, empty training set, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Argument outside the mathematical domain of an operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

class MalformedResponse : public Error {
 public:
  using Error::Error;
};

class DegeneratePair : public Error {
 public:
  using Error::Error;
};

class GenerationFailure : public Error {
 public:
  using Error::Error;
};

class IncomparableRecords : public Error {
 public:
  using Error::Error;
};

// Raised by the optimizer when a non-finite gradient shows up.
class TrainingAborted : public Error {
 public:
  using Error::Error;
};

}  // namespace prefbench
