#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace merinda {

// Base for every error raised by the library. The CLI maps the concrete
// subclasses onto stable exit codes (2 contract/usage, 3 data/calibration,
// 4 numerical divergence).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Violated precondition or dimension mismatch.
class ContractError : public Error {
 public:
  using Error::Error;
};

class NotFoundError : public Error {
 public:
  using Error::Error;
};

class CapacityError : public Error {
 public:
  using Error::Error;
};

// Malformed text input. `line` is 1-based, 0 when not applicable.
class ParseError : public Error {
 public:
  ParseError(const std::string& source, std::size_t line, const std::string& field,
             const std::string& what)
      : Error(source + (line ? ":" + std::to_string(line) : std::string()) +
              (field.empty() ? std::string() : " [" + field + "]") + ": " + what),
        line_(line),
        field_(field) {}

  std::size_t line() const { return line_; }
  const std::string& field() const { return field_; }

 private:
  std::size_t line_;
  std::string field_;
};

// Not enough samples for the requested windowing, empty tables, etc.
class DataError : public Error {
 public:
  using Error::Error;
};

class CalibrationError : public Error {
 public:
  using Error::Error;
};

// Requested initiation interval is below a loop-carried dependency distance.
class InfeasibleIIError : public ContractError {
 public:
  using ContractError::ContractError;
};

// An integration produced a non-finite or out-of-range state.
class DivergenceError : public Error {
 public:
  explicit DivergenceError(std::int64_t step)
      : Error("trajectory diverged at step " + std::to_string(step)), step_(step) {}

  std::int64_t step() const { return step_; }

 private:
  std::int64_t step_;
};

}  // namespace merinda
