#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "rcn/tensor.hpp"

namespace rcn {

/// |a - n| / max(|a|, |n|, 1e-8)
double relative_error(double analytic, double numeric);

struct GradCheckOffender {
  std::string tensor;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradCheckReport {
  std::string name;
  double tolerance = 0.0;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::vector<GradCheckOffender> offenders;

  bool passed() const { return offenders.empty(); }
  std::string summary() const;
};

struct GradCheckOptions {
  double epsilon = 1e-4;
  double tolerance = 1e-4;
  /// Tensors larger than this are checked on a seeded random subset.
  std::size_t max_coords_per_tensor = 64;
  std::uint64_t seed = 0;
};

/// A tensor whose entries are perturbed, with the analytic gradient of the
/// scalar objective with respect to it.
struct GradCheckInput {
  std::string name;
  Tensor4* value;
  Tensor4 analytic;
};

/// Compares each analytic gradient with central differences
/// (f(x + eps) - f(x - eps)) / (2 eps), perturbing one coordinate at a time in
/// place and restoring it afterwards. `objective` must read the current
/// contents of the input tensors.
GradCheckReport check_gradients(const std::string& name, std::vector<GradCheckInput>& inputs,
                                const std::function<double()>& objective,
                                const GradCheckOptions& options);

}  // namespace rcn
