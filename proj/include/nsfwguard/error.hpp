#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace nsfwguard {

/// Base of every error the library throws. `exit_code()` is what the CLI
/// returns when the error escapes a subcommand.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual int exit_code() const noexcept { return 1; }
};

/// A record or configuration broke an invariant. `subject()` names the
/// offending sample id (or field).
class ValidationError : public Error {
 public:
  ValidationError(std::string subject, const std::string& what);
  const std::string& subject() const noexcept { return subject_; }

 private:
  std::string subject_;
};

class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what);
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class IoError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 2; }
};

class BackendError : public Error {
 public:
  BackendError(std::string backend, const std::string& what);
  const std::string& backend() const noexcept { return backend_; }
  int exit_code() const noexcept override { return 2; }

 private:
  std::string backend_;
};

class CompositionError : public Error {
 public:
  explicit CompositionError(std::string source);
  const std::string& source() const noexcept { return source_; }

 private:
  std::string source_;
};

class ShapeError : public Error {
  using Error::Error;
};
class RangeError : public Error {
  using Error::Error;
};
class NumericError : public Error {
  using Error::Error;
};
class PreconditionError : public Error {
  using Error::Error;
};
class EmptySelection : public Error {
  using Error::Error;
};
class EmptyDataset : public Error {
  using Error::Error;
};
class EmptyBatch : public Error {
  using Error::Error;
};
class ConfigError : public Error {
  using Error::Error;
};

}  // namespace nsfwguard
