#pragma once

#include "clasp/autodiff.hpp"
#include "clasp/tensor.hpp"

namespace clasp {

// Raw per-segment features of one video after padding/clipping to T.
struct VideoFeatures {
  Tensor audio;   // T×d_a
  Tensor visual;  // T×d_v
  Mask valid;     // T

  std::size_t steps() const { return valid.size(); }
};

}  // namespace clasp
