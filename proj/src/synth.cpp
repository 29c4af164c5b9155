#include "clasp/synth.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "clasp/errors.hpp"

namespace clasp {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

constexpr std::size_t kPrototypeRetries = 1000;
constexpr std::size_t kPlacementRetries = 64;

Tensor draw_prototypes(std::mt19937_64& rng, std::size_t count, std::size_t dim, double separation) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor out({count, dim});
  for (std::size_t c = 0; c < count; ++c) {
    bool placed = false;
    for (std::size_t attempt = 0; attempt < kPrototypeRetries && !placed; ++attempt) {
      std::vector<double> v(dim);
      double norm = 0.0;
      for (double& x : v) {
        x = normal(rng);
        norm += x * x;
      }
      norm = std::sqrt(norm);
      if (norm == 0.0) continue;
      for (double& x : v) x /= norm;
      placed = true;
      for (std::size_t o = 0; o < c && placed; ++o) {
        double dist = 0.0;
        for (std::size_t j = 0; j < dim; ++j) dist += (v[j] - out(o, j)) * (v[j] - out(o, j));
        placed = std::sqrt(dist) >= separation;
      }
      if (placed) std::copy(v.begin(), v.end(), out.row_span(c).begin());
    }
    if (!placed) {
      throw ConfigError("cannot place " + std::to_string(count) + " unit prototypes in " + std::to_string(dim) +
                        " dimensions with separation " + std::to_string(separation));
    }
  }
  return out;
}

}  // namespace

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) { return splitmix64(seed ^ splitmix64(stream)); }

void SynthConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("invalid synth config: " + what); };
  if (categories == 0) fail("categories must be positive");
  if (audio_dim == 0 || visual_dim == 0) fail("feature widths must be positive");
  if (min_steps == 0 || min_steps > max_steps) fail("need 1 <= min_steps <= max_steps");
  if (min_events > max_events) fail("need min_events <= max_events");
  if (min_event_length == 0 || min_event_length > max_event_length) fail("need 1 <= min_event_length <= max_event_length");
  if (max_event_length > min_steps) fail("max_event_length exceeds min_steps");
  if (!(distractor_rate >= 0.0 && distractor_rate <= 1.0)) fail("distractor_rate must lie in [0,1]");
  if (!(noise_std >= 0.0) || !std::isfinite(noise_std)) fail("noise_std must be finite and non-negative");
  if (!(prototype_separation >= 0.0 && prototype_separation <= 2.0)) fail("prototype_separation must lie in [0,2]");
}

Prototypes make_prototypes(const SynthConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(mix_seed(cfg.seed, ~0ull));
  Prototypes p;
  p.audio = draw_prototypes(rng, cfg.categories, cfg.audio_dim, cfg.prototype_separation);
  p.visual = draw_prototypes(rng, cfg.categories, cfg.visual_dim, cfg.prototype_separation);
  return p;
}

SynthVideo synthesize_video(const SynthConfig& cfg, const Prototypes& prototypes, std::size_t index) {
  std::mt19937_64 rng(mix_seed(cfg.seed, index));
  auto uniform_int = [&rng](std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
  };
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 1.0);

  const std::size_t steps = uniform_int(cfg.min_steps, cfg.max_steps);
  const std::size_t wanted = uniform_int(cfg.min_events, cfg.max_events);

  // Events never overlap or touch, so per-modality interval sets stay
  // disjoint and an audio-only distractor can never meet a visual interval
  // of its own category.
  std::vector<std::uint8_t> occupied(steps, 0);
  SynthVideo out;
  for (std::size_t n = 0; n < wanted; ++n) {
    for (std::size_t attempt = 0; attempt < kPlacementRetries; ++attempt) {
      const std::size_t length = uniform_int(cfg.min_event_length, std::min(cfg.max_event_length, steps));
      const std::size_t start = uniform_int(0, steps - length);
      const std::size_t lo = start == 0 ? 0 : start - 1;
      const std::size_t hi = std::min(steps - 1, start + length);
      if (std::any_of(occupied.begin() + static_cast<std::ptrdiff_t>(lo),
                      occupied.begin() + static_cast<std::ptrdiff_t>(hi) + 1, [](auto v) { return v != 0; })) {
        continue;
      }
      std::fill_n(occupied.begin() + static_cast<std::ptrdiff_t>(start), length, std::uint8_t{1});
      const EventInstance ev{static_cast<std::uint32_t>(start), static_cast<std::uint32_t>(start + length - 1),
                             static_cast<std::uint32_t>(uniform_int(0, cfg.categories - 1))};
      if (unit(rng) < cfg.distractor_rate) {
        (unit(rng) < 0.5 ? out.audio_events : out.visual_events).push_back(ev);
      } else {
        out.audio_events.push_back(ev);
        out.visual_events.push_back(ev);
        out.record.events.push_back(ev);
      }
      break;
    }
  }
  std::sort(out.record.events.begin(), out.record.events.end());
  std::sort(out.audio_events.begin(), out.audio_events.end());
  std::sort(out.visual_events.begin(), out.visual_events.end());

  auto render = [&](std::size_t dim, const Tensor& protos, const std::vector<EventInstance>& events) {
    Tensor x({steps, dim});
    for (double& v : x.data()) v = cfg.noise_std * noise(rng);
    for (const auto& e : events)
      for (std::size_t t = e.start; t <= e.end; ++t)
        for (std::size_t j = 0; j < dim; ++j) x(t, j) += protos(e.category, j);
    // Stored as float32 on disk; round now so files round-trip exactly.
    for (double& v : x.data()) v = static_cast<double>(static_cast<float>(v));
    return x;
  };
  out.record.audio = render(cfg.audio_dim, prototypes.audio, out.audio_events);
  out.record.visual = render(cfg.visual_dim, prototypes.visual, out.visual_events);
  out.record.label = labels_from_events(out.record.events, cfg.categories);
  char id[32];
  std::snprintf(id, sizeof id, "vid_%05zu", index);
  out.record.id = id;
  return out;
}

std::vector<SynthVideo> synthesize_videos(const SynthConfig& cfg) {
  const Prototypes prototypes = make_prototypes(cfg);
  std::vector<SynthVideo> out;
  out.reserve(cfg.num_videos);
  for (std::size_t i = 0; i < cfg.num_videos; ++i) out.push_back(synthesize_video(cfg, prototypes, i));
  return out;
}

std::vector<VideoRecord> synthesize_dataset(const SynthConfig& cfg) {
  std::vector<VideoRecord> out;
  for (auto& v : synthesize_videos(cfg)) out.push_back(std::move(v.record));
  return out;
}

}  // namespace clasp
