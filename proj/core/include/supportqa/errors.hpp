#pragma once

#include <stdexcept>
#include <string>

namespace supportqa {

// Every failure raised by the library derives from Error so callers (the CLI,
// the scoring service) can catch one type and still report the category.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& message, std::size_t line)
      : Error("line " + std::to_string(line) + ": " + message), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class CapacityError : public Error {
 public:
  CapacityError(const std::string& message, std::size_t accepted_shortfall,
                std::size_t unaccepted_shortfall)
      : Error(message),
        accepted_shortfall_(accepted_shortfall),
        unaccepted_shortfall_(unaccepted_shortfall) {}
  std::size_t accepted_shortfall() const noexcept { return accepted_shortfall_; }
  std::size_t unaccepted_shortfall() const noexcept { return unaccepted_shortfall_; }

 private:
  std::size_t accepted_shortfall_;
  std::size_t unaccepted_shortfall_;
};

class RangeError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  NumericError(const std::string& message, std::string example_id, long step = -1)
      : Error(message), example_id_(std::move(example_id)), step_(step) {}
  const std::string& example_id() const noexcept { return example_id_; }
  long step() const noexcept { return step_; }

 private:
  std::string example_id_;
  long step_;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class DigestError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace supportqa
