#pragma once

#include <stdexcept>
#include <string>

namespace abd {

// Exit-code mapping used by the CLI: ConfigError -> 2, DataError -> 3,
// NumericError -> 4.

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Argument outside the mathematical domain of a function (e.g. a
/// non-positive distance handed to the pair potential).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// A preference pair whose winner does not outscore its loser.
class OrderingError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace abd
