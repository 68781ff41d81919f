#pragma once

#include <stdexcept>
#include <string>

namespace invlab {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Argument outside the mathematical domain of an op (log of a non-positive
/// value, fractional power of a negative base, zero-norm cosine input, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

class NonFiniteError : public Error {
 public:
  NonFiniteError(const std::string& what, std::size_t node_index)
      : Error(what), node_index_(node_index) {}
  std::size_t node_index() const noexcept { return node_index_; }

 private:
  std::size_t node_index_;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class DigestMismatch : public Error {
 public:
  using Error::Error;
};

}  // namespace invlab
