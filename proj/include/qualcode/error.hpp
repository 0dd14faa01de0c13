#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace qualcode {

// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

// Violated numerical or structural precondition (zero norm, empty input, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

// A remote model service failed after all retries, or returned garbage.
class BackendError : public Error {
 public:
  using Error::Error;
};

class RenderError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class NotFoundError : public Error {
 public:
  using Error::Error;
};

}  // namespace qualcode
