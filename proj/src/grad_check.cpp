#include "rcn/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "rcn/error.hpp"
#include "rcn/rng.hpp"

namespace rcn {

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

std::string GradCheckReport::summary() const {
  std::ostringstream s;
  s << name << ": " << (passed() ? "PASS" : "FAIL") << " max_rel_error=" << max_rel_error
    << " tol=" << tolerance << " coords=" << checked;
  for (std::size_t i = 0; i < std::min<std::size_t>(offenders.size(), 5); ++i) {
    const auto& o = offenders[i];
    s << "\n  " << o.tensor << "[" << o.index << "] analytic=" << o.analytic
      << " numeric=" << o.numeric << " rel=" << o.rel_error;
  }
  if (offenders.size() > 5) s << "\n  ... " << offenders.size() - 5 << " more";
  return s.str();
}

GradCheckReport check_gradients(const std::string& name, std::vector<GradCheckInput>& inputs,
                                const std::function<double()>& objective,
                                const GradCheckOptions& options) {
  GradCheckReport report;
  report.name = name;
  report.tolerance = options.tolerance;
  Rng rng(options.seed);
  for (GradCheckInput& in : inputs) {
    if (in.analytic.dims() != in.value->dims()) {
      throw ShapeError("check_gradients: analytic gradient for " + in.name + " has dims " +
                       in.analytic.dims().str() + ", value " + in.value->dims().str());
    }
    std::vector<std::size_t> coords(in.value->size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (coords.size() > options.max_coords_per_tensor) {
      // Partial Fisher-Yates: first max_coords entries become a random subset.
      for (std::size_t i = 0; i < options.max_coords_per_tensor; ++i) {
        const auto j = static_cast<std::size_t>(
            rng.uniform_int(static_cast<std::int64_t>(i), static_cast<std::int64_t>(coords.size() - 1)));
        std::swap(coords[i], coords[j]);
      }
      coords.resize(options.max_coords_per_tensor);
      std::sort(coords.begin(), coords.end());
    }
    for (std::size_t idx : coords) {
      double& x = in.value->data()[idx];
      const double saved = x;
      x = saved + options.epsilon;
      const double up = objective();
      x = saved - options.epsilon;
      const double down = objective();
      x = saved;
      const double numeric = (up - down) / (2.0 * options.epsilon);
      const double analytic = in.analytic.data()[idx];
      const double rel = relative_error(analytic, numeric);
      report.max_rel_error = std::max(report.max_rel_error, rel);
      ++report.checked;
      if (!(rel <= options.tolerance)) report.offenders.push_back({in.name, idx, analytic, numeric, rel});
    }
  }
  return report;
}

}  // namespace rcn
