#pragma once

#include <stdexcept>
#include <string>

namespace rmfg {

// Bad shapes, mismatched grids, malformed configuration documents.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite or otherwise unusable numeric input.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A modelling hypothesis fails. The message starts with the assumption tag,
// for example "(S3): R_t not positive definite at t=0.5".
class AssumptionError : public std::runtime_error {
 public:
  AssumptionError(const std::string& tag, const std::string& what)
      : std::runtime_error("(" + tag + "): " + what), tag_(tag) {}
  const std::string& tag() const noexcept { return tag_; }

 private:
  std::string tag_;
};

// Singular flows, Riccati blow-up, lost symmetry and similar scheme failures.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace rmfg
