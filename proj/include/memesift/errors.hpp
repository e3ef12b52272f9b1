#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace memesift {

// Base of every library exception. The CLI maps subclasses onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

class ArgumentError : public Error {
 public:
  using Error::Error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Malformed binary file; offset is the byte position where decoding failed.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

// Malformed text input; line is 1-based.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class DivergenceError : public Error {
 public:
  explicit DivergenceError(std::size_t epoch)
      : Error("training diverged: non-finite loss at epoch " + std::to_string(epoch)),
        epoch_(epoch) {}
  std::size_t epoch() const noexcept { return epoch_; }

 private:
  std::size_t epoch_;
};

// Chance agreement of 1 makes Fleiss' kappa 0/0.
class DegenerateAgreementError : public Error {
 public:
  using Error::Error;
};

class DegenerateEmbeddingError : public Error {
 public:
  using Error::Error;
};

class RenderError : public Error {
 public:
  explicit RenderError(const std::string& placeholder)
      : Error("unbound template placeholder {" + placeholder + "}"), placeholder_(placeholder) {}
  const std::string& placeholder() const noexcept { return placeholder_; }

 private:
  std::string placeholder_;
};

// HTTP failure; status is 0 when no response arrived (timeout, refused).
class TransportError : public Error {
 public:
  TransportError(const std::string& what, int status) : Error(what), status_(status) {}
  int status() const noexcept { return status_; }

 private:
  int status_;
};

class BackendError : public Error {
 public:
  using Error::Error;
};

}  // namespace memesift
