#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "clasp/autodiff.hpp"

namespace clasp {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  // Coordinates where the one-sided slopes disagree, i.e. f has a kink
  // (ReLU, max, top-k switch) within h of the probe point.
  std::vector<std::size_t> skipped;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;

  bool passed(double tolerance) const { return max_rel_error < tolerance; }
};

// Central differences with h=1e-5 carry absolute noise near eps·|f|/h, a few
// 1e-11 for O(1) losses, so a 1e-4 relative match is only resolvable for
// gradients above ~1e-6. Smaller magnitudes are compared against this floor.
inline constexpr double kGradientFloor = 1e-6;

// |analytic - numeric| / max(kGradientFloor, |analytic| + |numeric|)
double relative_error(double analytic, double numeric);

// Compares an analytic gradient against central differences of `value_fn`
// evaluated around `x`. Used directly for model-wide checks where the
// analytic gradient comes from a full training graph.
GradCheckResult compare_gradient(const std::function<double(const Tensor&)>& value_fn, const Tensor& x,
                                 const Tensor& analytic, double h = 1e-5);

// `f` builds a scalar on the given tape from a leaf holding x.
using ScalarFn = std::function<Var(Tape&, Var)>;

GradCheckResult gradient_check(const ScalarFn& f, const Tensor& x, double h = 1e-5);

}  // namespace clasp
