#pragma once

#include <limits>
#include <vector>

#include "clasp/autodiff.hpp"
#include "clasp/tensor.hpp"

namespace clasp {

enum class JsdVariant {
  standard,    // ½KL(P_a‖P̄) + ½KL(P_v‖P̄)
  as_written,  // ½KL(P̄‖P_a) + ½KL(P̄‖P_v)
};

inline constexpr double kProbabilityClamp = 1e-7;

// Score assigned to padded timesteps; below every real score.
inline constexpr double kPaddedScore = -std::numeric_limits<double>::infinity();

// Per-timestep cross-modal agreement.
struct AgreementTrace {
  Tensor p_audio;             // T×C
  Tensor p_visual;            // T×C
  Tensor p_mean;              // T×C
  std::vector<double> d_jsd;  // T, in [0,1]
  std::vector<double> score;  // T, 1 - d_jsd; kPaddedScore on padding
};

// Jensen-Shannon divergence (base 2) between Bernoulli(p) and Bernoulli(q),
// inputs clamped to [1e-7, 1-1e-7].
double bernoulli_jsd(double p, double q, JsdVariant variant = JsdVariant::standard);

// Treats every category as an independent Bernoulli variable and averages the
// per-category divergences, so d_jsd stays in [0,1] for multi-label sigmoid
// outputs. The as-written variant is unbounded above and is capped at 1.
AgreementTrace mutual_agreement(const Tensor& p_audio, const Tensor& p_visual, const Mask& valid,
                                JsdVariant variant = JsdVariant::standard);

}  // namespace clasp
