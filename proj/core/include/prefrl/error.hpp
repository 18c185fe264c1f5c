#pragma once

#include <stdexcept>
#include <string>

namespace prefrl {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// A caller broke a documented precondition (dimension mismatch, bad length).
class ContractViolation : public Error {
public:
  using Error::Error;
};

/// Configuration could not be parsed or failed validation.
class ConfigError : public Error {
public:
  using Error::Error;
};

/// Not enough trajectory material to satisfy a sampling request.
class InsufficientData : public Error {
public:
  using Error::Error;
};

/// A numerical update produced NaN/Inf and was rejected.
class NonFiniteError : public Error {
public:
  using Error::Error;
};

/// A label channel could not deliver a label (no UI attached, timeout).
class ChannelUnavailable : public Error {
public:
  using Error::Error;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw ContractViolation(message);
}

}  // namespace prefrl
