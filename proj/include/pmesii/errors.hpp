#pragma once

#include <stdexcept>
#include <string>

namespace pmesii {

class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Rejected input: the caller handed us something malformed or out of bounds.
/// The CLI maps this family to exit code 2 and the service to HTTP 400.
class ValidationError : public Error {
public:
  using Error::Error;
};

class SchemaError : public ValidationError {
public:
  using ValidationError::ValidationError;
};

class DimensionError : public ValidationError {
public:
  using ValidationError::ValidationError;
};

class RangeError : public ValidationError {
public:
  using ValidationError::ValidationError;
};

class ScheduleError : public ValidationError {
public:
  using ValidationError::ValidationError;
};

class ConstraintError : public ValidationError {
public:
  using ValidationError::ValidationError;
};

class PreconditionError : public ValidationError {
public:
  using ValidationError::ValidationError;
};

class UnknownVariableError : public ValidationError {
public:
  using ValidationError::ValidationError;
};

class UnknownSourceError : public ValidationError {
public:
  using ValidationError::ValidationError;
};

class EmptyInputError : public ValidationError {
public:
  using ValidationError::ValidationError;
};

class InsufficientDataError : public Error {
public:
  using Error::Error;
};

class TimeoutError : public Error {
public:
  using Error::Error;
};

/// A submission that arrived for a phase or window that is not open.
class OutOfTurnError : public Error {
public:
  using Error::Error;
};

class NotFoundError : public Error {
public:
  using Error::Error;
};

class CorruptLogError : public Error {
public:
  using Error::Error;
};

} // namespace pmesii
