#pragma once

#include <stdexcept>
#include <string>

namespace autolycus {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad inputs: files, flags, documents, out-of-range values. The CLI maps
// these to exit code 2.
class InputError : public Error {
 public:
  using Error::Error;
};

class ParseError : public InputError {
 public:
  using InputError::InputError;
};

class ValidationError : public InputError {
 public:
  using InputError::InputError;
};

class SchemaError : public InputError {
 public:
  using InputError::InputError;
};

class ArgumentError : public InputError {
 public:
  using InputError::InputError;
};

class FormatError : public InputError {
 public:
  using InputError::InputError;
};

class CapacityError : public InputError {
 public:
  using InputError::InputError;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

// Connection-level failure talking to a remote oracle.
class TransportError : public Error {
 public:
  using Error::Error;
};

// The remote side answered, but not with a 2xx or not with a valid body.
class ProtocolError : public Error {
 public:
  ProtocolError(int status, const std::string& body)
      : Error("HTTP " + std::to_string(status) + ": " + body), status_(status) {}
  explicit ProtocolError(const std::string& what) : Error(what), status_(0) {}

  int status() const noexcept { return status_; }

 private:
  int status_;
};

}  // namespace autolycus
