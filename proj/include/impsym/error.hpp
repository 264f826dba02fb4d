#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace impsym {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Malformed user input: files, expressions, configuration values.
/// The CLI maps these to exit code 2.
class InputError : public Error {
public:
  using Error::Error;
};

/// Expression syntax error. `offset` is the 0-based character offset into the
/// expression text.
class ParseError : public InputError {
public:
  ParseError(std::size_t offset, const std::string& message)
      : InputError("offset " + std::to_string(offset) + ": " + message),
        offset_(offset), detail_(message) {}

  std::size_t offset() const noexcept { return offset_; }
  const std::string& detail() const noexcept { return detail_; }

private:
  std::size_t offset_;
  std::string detail_;
};

/// Arithmetic domain error while evaluating an expression (ln of a
/// non-positive value, sqrt of a negative value, unbound variable).
class EvalError : public Error {
public:
  using Error::Error;
};

class DimensionError : public Error {
public:
  using Error::Error;
};

/// Raised by the integrators on blow-up or non-finite arithmetic.
class IntegrationError : public Error {
public:
  IntegrationError(std::size_t step, const std::string& message)
      : Error("step " + std::to_string(step) + ": " + message), step_(step) {}

  std::size_t step() const noexcept { return step_; }

private:
  std::size_t step_;
};

}  // namespace impsym
