#pragma once

#include <cstdint>
#include <vector>

#include "clasp/data_io.hpp"

namespace clasp {

struct SynthConfig {
  std::size_t num_videos = 100;
  std::size_t min_steps = 40;  // T₀ range, inclusive
  std::size_t max_steps = 64;
  std::size_t categories = 6;
  std::size_t audio_dim = 16;
  std::size_t visual_dim = 16;
  std::size_t min_events = 1;  // events placed per video, inclusive
  std::size_t max_events = 3;
  std::size_t min_event_length = 4;
  std::size_t max_event_length = 16;
  double distractor_rate = 0.3;  // P(event is present in one modality only)
  double noise_std = 0.3;
  double prototype_separation = 0.5;  // min distance between unit prototypes
  std::uint64_t seed = 0;

  void validate() const;  // throws ConfigError
};

// Unit-norm category prototypes, one row per category.
struct Prototypes {
  Tensor audio;   // C×d_a
  Tensor visual;  // C×d_v
};

// A generated video with the generator's own view of where each modality
// carries which category.
struct SynthVideo {
  VideoRecord record;
  std::vector<EventInstance> audio_events;
  std::vector<EventInstance> visual_events;
};

Prototypes make_prototypes(const SynthConfig& cfg);
// Seeded from (cfg.seed, index) only, so videos are independent of order.
SynthVideo synthesize_video(const SynthConfig& cfg, const Prototypes& prototypes, std::size_t index);
std::vector<SynthVideo> synthesize_videos(const SynthConfig& cfg);
std::vector<VideoRecord> synthesize_dataset(const SynthConfig& cfg);

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace clasp
