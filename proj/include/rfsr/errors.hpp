#pragma once

#include <stdexcept>
#include <string>

namespace rfsr {

// Shapes disagree or violate a layout requirement (odd sizes, empty maps).
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class RangeError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

// Bad or incomplete configuration: missing models, unknown keys, missing ctx fields.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A model or adapter could not be used (not loaded, bad conditioning, failed self-test).
class ModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace rfsr
