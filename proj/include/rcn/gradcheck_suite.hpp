#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rcn/grad_check.hpp"

namespace rcn {

struct GradCheckSuiteOptions {
  /// Name prefixes to run; empty runs everything.
  std::vector<std::string> ops;
  /// Flips the sign of the analytic gradient of checks matching this prefix.
  std::string inject_sign_error;
  std::uint64_t seed = 1;
};

struct GradCheckSuiteResult {
  std::vector<GradCheckReport> reports;

  bool passed() const;
  std::vector<std::string> failed() const;
};

/// Every registered check, primitives first, then whole networks.
std::vector<std::string> gradcheck_names();

/// Throws ConfigError if a requested prefix matches no check.
GradCheckSuiteResult run_gradcheck_suite(const GradCheckSuiteOptions& options);

}  // namespace rcn
