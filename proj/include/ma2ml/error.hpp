#pragma once

#include <stdexcept>
#include <string>

namespace ma2ml {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed structured text (JSON or CSV).
class ParseError : public Error {
 public:
  using Error::Error;
};

/// Well-formed input that violates an invariant. The message names the field.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Two values that must share a shape (space/action/policy) do not.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Tabular critic queried at a joint action it has never seen.
class UnknownCellError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf in a loss or gradient.
class NumericError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Search stopped early (persistent oracle failure, critic divergence).
class SearchAborted : public Error {
 public:
  using Error::Error;
};

}  // namespace ma2ml
