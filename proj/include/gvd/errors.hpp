#pragma once

#include <stdexcept>
#include <string>

namespace gvd {

// Malformed or inconsistent input data (files, annotations, features).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration or dimension mismatch in model setup.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace gvd
