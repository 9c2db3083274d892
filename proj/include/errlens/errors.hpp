#pragma once

#include <stdexcept>
#include <string>

namespace errlens {

// Base of every error raised by the library. The CLI maps the concrete
// subclasses onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller supplied inputs that violate a precondition.
class ArgumentError : public Error {
 public:
  using Error::Error;
};

// Well-formed input whose content is inconsistent (missing keys, self-pairs,
// non-finite values).
class DataError : public Error {
 public:
  using Error::Error;
};

// Malformed file content. `line` is 1-based, 0 when unknown.
class ParseError : public DataError {
 public:
  ParseError(const std::string& what, std::size_t line)
      : DataError(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// A correlation that is not defined for the given input (constant vector,
// fewer than two items, no judgments).
class UndefinedCorrelationError : public DataError {
 public:
  using DataError::DataError;
};

// Backend could not be reached or timed out.
class TransportError : public Error {
 public:
  using Error::Error;
};

// Backend replied with something that violates the wire schema.
class ProtocolError : public TransportError {
 public:
  using TransportError::TransportError;
};

// Backend replied with a non-2xx status.
class ServerError : public TransportError {
 public:
  ServerError(int status, std::string body, const std::string& context = {})
      : TransportError(context + "server returned HTTP " + std::to_string(status) + ": " + body),
        status_(status),
        body_(std::move(body)) {}
  int status() const noexcept { return status_; }
  const std::string& body() const noexcept { return body_; }

 private:
  int status_;
  std::string body_;
};

}  // namespace errlens
