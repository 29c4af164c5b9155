#include "clasp/agreement.hpp"

#include <algorithm>
#include <cmath>

#include "clasp/errors.hpp"

namespace clasp {

namespace {

// KL(Bernoulli(a) ‖ Bernoulli(b)) in bits.
double bernoulli_kl(double a, double b) {
  return a * std::log2(a / b) + (1.0 - a) * std::log2((1.0 - a) / (1.0 - b));
}

}  // namespace

double bernoulli_jsd(double p, double q, JsdVariant variant) {
  p = std::clamp(p, kProbabilityClamp, 1.0 - kProbabilityClamp);
  q = std::clamp(q, kProbabilityClamp, 1.0 - kProbabilityClamp);
  const double m = 0.5 * (p + q);
  if (variant == JsdVariant::standard) return 0.5 * bernoulli_kl(p, m) + 0.5 * bernoulli_kl(q, m);
  return 0.5 * bernoulli_kl(m, p) + 0.5 * bernoulli_kl(m, q);
}

AgreementTrace mutual_agreement(const Tensor& p_audio, const Tensor& p_visual, const Mask& valid,
                                JsdVariant variant) {
  if (p_audio.shape() != p_visual.shape()) {
    throw ShapeError("mutual_agreement: P_a " + shape_str(p_audio.shape()) + " vs P_v " +
                     shape_str(p_visual.shape()));
  }
  const std::size_t steps = p_audio.rows(), categories = p_audio.cols();
  if (valid.size() != steps) throw ShapeError("mutual_agreement: mask length does not match T");
  if (categories == 0) throw ContractError("mutual_agreement: zero categories");

  AgreementTrace trace;
  trace.p_audio = p_audio;
  trace.p_visual = p_visual;
  trace.p_mean = Tensor(p_audio.shape());
  trace.d_jsd.assign(steps, 0.0);
  trace.score.assign(steps, kPaddedScore);
  for (std::size_t t = 0; t < steps; ++t) {
    double total = 0.0;
    for (std::size_t c = 0; c < categories; ++c) {
      trace.p_mean(t, c) = 0.5 * (p_audio(t, c) + p_visual(t, c));
      total += bernoulli_jsd(p_audio(t, c), p_visual(t, c), variant);
    }
    // Rounding can leave the standard variant a hair outside [0,1].
    trace.d_jsd[t] = std::clamp(total / static_cast<double>(categories), 0.0, 1.0);
    if (valid[t]) trace.score[t] = 1.0 - trace.d_jsd[t];
  }
  return trace;
}

}  // namespace clasp
