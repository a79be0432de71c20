#pragma once

#include <stdexcept>
#include <string>

namespace rcn {

/// Invalid architecture, kernel, or run configuration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor dimensions that do not fit an operation.
class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad user data: coordinates outside a map, empty selections.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Metric cannot be computed, e.g. zero interocular distance.
class EvalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent file on disk.
class LoadError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// NaN/Inf during training or a failed gradient check.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace rcn
