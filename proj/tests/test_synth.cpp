#include "clasp/synth.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "clasp/errors.hpp"

namespace clasp {
namespace {

SynthConfig small_config(std::uint64_t seed = 3) {
  SynthConfig cfg;
  cfg.num_videos = 40;
  cfg.min_steps = 20;
  cfg.max_steps = 32;
  cfg.categories = 4;
  cfg.audio_dim = 6;
  cfg.visual_dim = 5;
  cfg.max_event_length = 10;
  cfg.seed = seed;
  return cfg;
}

// Per-timestep coverage of category c by a list of intervals.
std::vector<std::uint8_t> coverage(const std::vector<EventInstance>& events, std::size_t steps, std::uint32_t c) {
  std::vector<std::uint8_t> on(steps, 0);
  for (const auto& e : events)
    if (e.category == c)
      for (std::uint32_t t = e.start; t <= e.end; ++t) on[t] = 1;
  return on;
}

// Maximal runs of the per-category intersection of audio and visual coverage.
std::vector<EventInstance> intersect_oracle(const SynthVideo& v, std::size_t categories) {
  const std::size_t steps = v.record.steps();
  std::vector<EventInstance> out;
  for (std::uint32_t c = 0; c < categories; ++c) {
    const auto a = coverage(v.audio_events, steps, c);
    const auto b = coverage(v.visual_events, steps, c);
    std::size_t t = 0;
    while (t < steps) {
      if (!(a[t] && b[t])) {
        ++t;
        continue;
      }
      const std::size_t start = t;
      while (t < steps && a[t] && b[t]) ++t;
      out.push_back({static_cast<std::uint32_t>(start), static_cast<std::uint32_t>(t - 1), c});
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

TEST(Synth, NoDistractorsMeansEveryEventIsGroundTruth) {
  SynthConfig cfg = small_config();
  cfg.distractor_rate = 0.0;
  for (const auto& v : synthesize_videos(cfg)) {
    EXPECT_EQ(v.audio_events, v.record.events);
    EXPECT_EQ(v.visual_events, v.record.events);
    EXPECT_FALSE(v.record.events.empty());
  }
}

TEST(Synth, SameSeedGivesIdenticalBytes) {
  const auto a = synthesize_dataset(small_config(9));
  const auto b = synthesize_dataset(small_config(9));
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(write_feature_file(a[i]), write_feature_file(b[i]));
  const auto c = synthesize_dataset(small_config(10));
  EXPECT_NE(write_feature_file(a[0]), write_feature_file(c[0]));
}

TEST(Synth, VideosIndependentOfCount) {
  SynthConfig cfg = small_config();
  const auto all = synthesize_dataset(cfg);
  cfg.num_videos = 5;
  const auto few = synthesize_dataset(cfg);
  for (std::size_t i = 0; i < few.size(); ++i) EXPECT_EQ(few[i], all[i]);
}

TEST(Synth, GroundTruthIsIntersectionOfModalities) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    SynthConfig cfg = small_config(seed);
    cfg.distractor_rate = 0.5;
    for (const auto& v : synthesize_videos(cfg)) EXPECT_EQ(v.record.events, intersect_oracle(v, cfg.categories)) << v.record.id;
  }
}

TEST(Synth, DistractorOnlyCategoryIsNotLabelled) {
  SynthConfig cfg = small_config(4);
  cfg.distractor_rate = 0.6;
  std::size_t distractor_only = 0;
  for (const auto& v : synthesize_videos(cfg)) {
    for (std::uint32_t c = 0; c < cfg.categories; ++c) {
      bool in_gt = false, in_one = false;
      for (const auto& e : v.record.events) in_gt |= e.category == c;
      for (const auto& e : v.audio_events) in_one |= e.category == c;
      for (const auto& e : v.visual_events) in_one |= e.category == c;
      EXPECT_EQ(v.record.label[c], in_gt ? 1 : 0);
      if (in_one && !in_gt) {
        ++distractor_only;
        EXPECT_EQ(v.record.label[c], 0);
      }
    }
  }
  EXPECT_GT(distractor_only, 0u);
}

TEST(Synth, RecordsAreValidAndWithinRanges) {
  const SynthConfig cfg = small_config();
  for (const auto& rec : synthesize_dataset(cfg)) {
    EXPECT_NO_THROW(validate_record(rec));
    EXPECT_GE(rec.steps(), cfg.min_steps);
    EXPECT_LE(rec.steps(), cfg.max_steps);
    EXPECT_EQ(rec.audio.cols(), cfg.audio_dim);
    EXPECT_EQ(rec.visual.cols(), cfg.visual_dim);
    for (const auto& e : rec.events) {
      EXPECT_GE(e.length(), cfg.min_event_length);
      EXPECT_LE(e.length(), cfg.max_event_length);
    }
    // Values fit float32 exactly.
    for (double x : rec.audio.data()) EXPECT_EQ(x, static_cast<double>(static_cast<float>(x)));
  }
}

TEST(Synth, PrototypesAreUnitAndSeparated) {
  SynthConfig cfg = small_config();
  cfg.prototype_separation = 1.0;
  const Prototypes p = make_prototypes(cfg);
  for (const Tensor* m : {&p.audio, &p.visual}) {
    for (std::size_t c = 0; c < cfg.categories; ++c) {
      double norm = 0.0;
      for (double x : m->row_span(c)) norm += x * x;
      EXPECT_NEAR(norm, 1.0, 1e-12);
      for (std::size_t o = 0; o < c; ++o) {
        double dist = 0.0;
        for (std::size_t j = 0; j < m->cols(); ++j) dist += std::pow((*m)(c, j) - (*m)(o, j), 2);
        EXPECT_GE(std::sqrt(dist), 1.0);
      }
    }
  }
}

TEST(Synth, EventRowsCarryPrototypeAndBackgroundIsNoise) {
  SynthConfig cfg = small_config();
  cfg.noise_std = 0.0;
  cfg.distractor_rate = 0.0;
  const Prototypes p = make_prototypes(cfg);
  const SynthVideo v = synthesize_video(cfg, p, 0);
  const auto on = coverage(v.record.events, v.record.steps(), v.record.events[0].category);
  for (std::size_t t = 0; t < v.record.steps(); ++t) {
    bool any = false;
    for (const auto& e : v.record.events) any |= t >= e.start && t <= e.end;
    for (std::size_t j = 0; j < cfg.audio_dim; ++j) {
      if (!any) EXPECT_EQ(v.record.audio(t, j), 0.0);
    }
    if (on[t]) {
      for (std::size_t j = 0; j < cfg.audio_dim; ++j)
        EXPECT_EQ(v.record.audio(t, j), static_cast<double>(static_cast<float>(p.audio(v.record.events[0].category, j))));
    }
  }
}

TEST(Synth, ImpossibleSeparationIsConfigError) {
  SynthConfig cfg = small_config();
  cfg.audio_dim = 1;
  cfg.categories = 3;  // only two unit vectors exist on the line
  cfg.prototype_separation = 1.5;
  EXPECT_THROW(make_prototypes(cfg), ConfigError);
}

TEST(Synth, InvalidConfigRejected) {
  SynthConfig cfg = small_config();
  cfg.min_steps = 50;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = small_config();
  cfg.distractor_rate = 1.5;
  EXPECT_THROW(synthesize_dataset(cfg), ConfigError);
  cfg = small_config();
  cfg.max_event_length = 40;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(MixSeed, StreamsDiffer) {
  EXPECT_NE(mix_seed(7, 0), mix_seed(7, 1));
  EXPECT_NE(mix_seed(7, 0), mix_seed(8, 0));
  EXPECT_EQ(mix_seed(7, 3), mix_seed(7, 3));
}

}  // namespace
}  // namespace clasp
