#pragma once

#include <stdexcept>
#include <string>

namespace pan {

// Root of every error the library throws. Callers that only need a message
// can catch this; the CLI maps the concrete types onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidShape : public Error {
 public:
  using Error::Error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class InvalidLabel : public Error {
 public:
  using Error::Error;
};

// Malformed or inconsistent input data (files, manifests, metadata).
class DataError : public Error {
 public:
  using Error::Error;
};

class IoError : public DataError {
 public:
  using DataError::DataError;
};

// Evaluation found no query with a valid match.
class EmptyProtocol : public DataError {
 public:
  using DataError::DataError;
};

// Non-finite loss during training.
class NumericDivergence : public Error {
 public:
  using Error::Error;
};

}  // namespace pan
