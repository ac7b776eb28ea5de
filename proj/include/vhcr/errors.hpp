#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace vhcr {

// Shapes that do not line up for an operation.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Argument outside a function's mathematical domain (log of a non-positive value, non-positive std).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Index past the end of a table (token id >= vocabulary size).
class RangeError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

// Caller broke an operation's precondition.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class UnsupportedKindError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class IntegrityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A NaN or infinity showed up where a finite value is required.
class NumericError : public std::runtime_error {
 public:
  NumericError(const std::string& what, std::size_t coordinate = npos)
      : std::runtime_error(what), coordinate_(coordinate) {}

  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

  std::size_t coordinate() const noexcept { return coordinate_; }

 private:
  std::size_t coordinate_;
};

}  // namespace vhcr
