#include "clasp/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "clasp/errors.hpp"

namespace clasp {

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(kGradientFloor, std::abs(analytic) + std::abs(numeric));
}

GradCheckResult compare_gradient(const std::function<double(const Tensor&)>& value_fn, const Tensor& x,
                                 const Tensor& analytic, double h) {
  if (analytic.shape() != x.shape()) {
    throw ShapeError("compare_gradient: gradient " + shape_str(analytic.shape()) + " for input " +
                     shape_str(x.shape()));
  }
  GradCheckResult result;
  const double center = value_fn(x);
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + h;
    const double plus = value_fn(probe);
    probe[i] = x[i] - h;
    const double minus = value_fn(probe);
    probe[i] = x[i];

    // A smooth f has one-sided slopes that differ by O(h·f''); a kink makes
    // them differ by a fraction of the slope itself.
    const double forward = (plus - center) / h;
    const double backward = (center - minus) / h;
    const double gap = std::abs(forward - backward);
    if (gap > 0.1 * (std::abs(forward) + std::abs(backward)) && gap > 1e-6) {
      result.skipped.push_back(i);
      continue;
    }
    const double numeric = (plus - minus) / (2.0 * h);
    const double err = relative_error(analytic[i], numeric);
    if (err > result.max_rel_error) {
      result.max_rel_error = err;
      result.worst_index = i;
      result.worst_analytic = analytic[i];
      result.worst_numeric = numeric;
    }
    ++result.checked;
  }
  return result;
}

GradCheckResult gradient_check(const ScalarFn& f, const Tensor& x, double h) {
  Tensor analytic;
  {
    Tape tape;
    Var leaf = tape.leaf(x, true);
    Var out = f(tape, leaf);
    tape.backward(out);
    analytic = leaf.grad();
  }
  auto value_fn = [&f](const Tensor& probe) {
    Tape tape;
    Var leaf = tape.leaf(probe, false);
    return f(tape, leaf).value().item();
  };
  return compare_gradient(value_fn, x, analytic, h);
}

}  // namespace clasp
