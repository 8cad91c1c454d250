#pragma once

#include <stdexcept>
#include <string>

namespace cfa {

// Tensor shapes or pattern geometry that do not fit together.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Argument outside the mathematical domain of an operation (log of x <= 0, ...).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Caller broke a documented precondition.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, int line)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace cfa
