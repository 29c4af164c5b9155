#include <gtest/gtest.h>

#include <cmath>

#include "clasp/errors.hpp"
#include "clasp/anchors.hpp"
#include "clasp/model.hpp"
#include "model_gradcheck.hpp"

using namespace clasp;
using namespace clasp::testing;

namespace {

HyperParams small_hp() {
  HyperParams hp;
  hp.max_steps = 16;
  hp.channels = 8;
  hp.categories = 4;
  hp.audio_dim = 5;
  hp.visual_dim = 7;
  hp.global_anchors = 3;
  hp.windows = 4;
  hp.local_anchors = 1;
  hp.heads = 4;
  return hp;
}

double sigmoid_ref(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void expect_all_zero(const Tensor& t) {
  for (double v : t.data()) EXPECT_EQ(v, 0.0);
}

}  // namespace

TEST(HyperParams, ValidateRejectsInconsistentValues) {
  HyperParams hp = small_hp();
  EXPECT_NO_THROW(hp.validate());
  hp.global_anchors = 17;
  EXPECT_THROW(hp.validate(), ConfigError);
  hp = small_hp();
  hp.local_anchors = 5;  // floor(16/4) = 4
  EXPECT_THROW(hp.validate(), ConfigError);
  hp = small_hp();
  hp.heads = 3;
  EXPECT_THROW(hp.validate(), ConfigError);
}

TEST(ModelParameters, InitializationIsSeededAndBounded) {
  const HyperParams hp = small_hp();
  const auto a = ModelParameters::initialize(hp, 5), b = ModelParameters::initialize(hp, 5);
  const auto c = ModelParameters::initialize(hp, 6);
  EXPECT_EQ(a, b);
  EXPECT_FALSE(a == c);
  EXPECT_NO_THROW(check_parameters(a, hp));
  const Tensor& w = a.at("meae.audio.w1");  // d×d, fan_in = d
  const double bound = 1.0 / std::sqrt(static_cast<double>(hp.channels));
  for (double v : w.data()) EXPECT_LE(std::abs(v), bound);
  for (double v : a.at("enc.audio.ln1.gamma").data()) EXPECT_EQ(v, 1.0);
  EXPECT_EQ(a.at("csai.w3").shape(), (Shape{16, 16}));
  EXPECT_EQ(a.at("csai.w4").shape(), (Shape{16, 8}));
  EXPECT_EQ(a.at("csai.audio.align").shape(), (Shape{3, 4}));
  EXPECT_EQ(a.at("cls.event.weight").shape(), (Shape{16, 4}));
}

TEST(Forward, OutputShapes) {
  const HyperParams hp = small_hp();
  const auto params = ModelParameters::initialize(hp, 1);
  std::mt19937_64 rng(2);
  const VideoFeatures input = random_video(rng, hp, 3);
  Tape tape;
  BoundParameters bound(tape, params);
  const ForwardResult r = forward(tape, bound, input, hp);
  const Shape td{16, 8}, tc{16, 4}, kd{3, 8};
  EXPECT_EQ(r.features.audio.shape(), td);
  EXPECT_EQ(r.features.visual.shape(), td);
  EXPECT_EQ(r.modality_probs.audio.shape(), tc);
  EXPECT_EQ(r.agreement.score.size(), 16u);
  EXPECT_EQ(r.anchors.indices.global.size(), 3u);
  EXPECT_EQ(r.anchors.indices.local.size(), 4u);
  EXPECT_EQ(r.anchors.fused.shape(), kd);
  EXPECT_EQ(r.anchors.fused_audio.shape(), kd);
  EXPECT_EQ(r.outputs.encoded_audio.shape(), td);
  EXPECT_EQ(r.outputs.propagated_visual.shape(), td);
  EXPECT_EQ(r.outputs.foreground.shape(), (Shape{16, 1}));
  EXPECT_EQ(r.outputs.event_probs.shape(), tc);
  EXPECT_EQ(r.outputs.video_probs.shape(), (Shape{1, 4}));
  EXPECT_EQ(r.propagation.audio_attention.shape(), (Shape{16, 3}));
}

TEST(Forward, PaddingNeverSelectedAndZeroProbability) {
  const HyperParams hp = small_hp();
  const auto params = ModelParameters::initialize(hp, 3);
  std::mt19937_64 rng(4);
  const VideoFeatures input = random_video(rng, hp, 6);
  Tape tape;
  BoundParameters bound(tape, params);
  const ForwardResult r = forward(tape, bound, input, hp);
  for (std::size_t t : r.anchors.indices.global) EXPECT_TRUE(input.valid[t]) << t;
  const auto windows = partition_windows(hp.max_steps, hp.windows);
  for (std::size_t m = 0; m < hp.windows; ++m) {
    for (std::size_t t : r.anchors.indices.local[m]) {
      EXPECT_TRUE(input.valid[t]) << t;
      // Windows 2 and 3 are partly or fully padding; the fully padded one
      // borrows a valid index from elsewhere.
      if (m < 2) EXPECT_TRUE(t >= windows[m].begin && t < windows[m].end);
    }
  }
  for (std::size_t t = 10; t < 16; ++t) {
    for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(r.outputs.event_probs.value()(t, c), 0.0);
    EXPECT_EQ(r.agreement.score[t], kPaddedScore);
  }
  for (double v : r.outputs.event_probs.value().data()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Forward, AttentionRowsSumToOneOverValidKeys) {
  const HyperParams hp = small_hp();
  const auto params = ModelParameters::initialize(hp, 5);
  std::mt19937_64 rng(6);
  const VideoFeatures input = random_video(rng, hp, 4);
  Tape tape;
  BoundParameters bound(tape, params);
  const ForwardResult r = forward(tape, bound, input, hp);
  ASSERT_EQ(r.encoding.audio_attention.size(), hp.heads);
  for (const Var& a : r.encoding.audio_attention) {
    for (std::size_t q = 0; q < 16; ++q) {
      double s = 0.0;
      for (std::size_t k = 0; k < 16; ++k) {
        if (!input.valid[k]) EXPECT_EQ(a.value()(q, k), 0.0);
        s += a.value()(q, k);
      }
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
  }
  for (std::size_t q = 0; q < 16; ++q) {
    double s = 0.0;
    for (std::size_t k = 0; k < 3; ++k) s += r.propagation.visual_attention.value()(q, k);
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
}

TEST(Forward, BypassWithoutAnchorsIsTransformerPlusClassifier) {
  HyperParams hp = small_hp();
  hp.use_global_anchors = false;
  hp.use_local_anchors = false;
  hp.bypass_anchors = true;
  auto params = ModelParameters::initialize(hp, 7);
  std::mt19937_64 rng(8);
  const VideoFeatures input = random_video(rng, hp, 2);

  Tape tape;
  BoundParameters bound(tape, params);
  const ForwardResult r = forward(tape, bound, input, hp);
  EXPECT_FALSE(r.anchors.fused.valid());

  Tape ref_tape;
  BoundParameters ref_bound(ref_tape, params);
  const FeatureSequence f = project_features(ref_tape, ref_bound, input, hp);
  const UnimodalEncoding enc = encode_unimodal(ref_tape, ref_bound, f, hp);
  const PredictionOutputs out = classify(ref_bound, enc.audio, enc.visual, input.valid, hp);
  EXPECT_EQ(r.outputs.event_probs.value(), out.event_probs.value());

  // Anchor parameters cannot influence the output.
  for (const char* name : {"csai.w3", "csai.w4", "atp.audio.wv", "csai.audio.align"}) params.at(name).fill(3.0);
  Tape again;
  BoundParameters again_bound(again, params);
  EXPECT_EQ(forward(again, again_bound, input, hp).outputs.event_probs.value(), out.event_probs.value());
}

TEST(Forward, AblationFlagsChangeTheGraph) {
  const HyperParams base = small_hp();
  std::mt19937_64 rng(9);
  const VideoFeatures input = random_video(rng, base, 0);
  auto run = [&](HyperParams hp) {
    const auto params = ModelParameters::initialize(hp, 10);
    Tape tape;
    BoundParameters bound(tape, params);
    return forward(tape, bound, input, hp).outputs.event_probs.value();
  };
  const Tensor full = run(base);
  HyperParams no_gai = base, no_lai = base, bypass = base, audio_only = base, encoded = base;
  no_gai.use_global_anchors = false;
  no_lai.use_local_anchors = false;
  bypass.bypass_anchors = true;
  audio_only.anchor_modality = AnchorModality::audio;
  encoded.agreement_source = AgreementSource::encoded;
  for (const HyperParams& hp : {no_gai, no_lai, bypass, audio_only}) EXPECT_NE(run(hp), full);
  (void)run(encoded);
}

TEST(Projection, ZeroInputGivesZeroOutputWithoutBias) {
  HyperParams hp = small_hp();
  hp.projection_bias = false;
  const auto params = ModelParameters::initialize(hp, 11);
  VideoFeatures input{Tensor({16, 5}), Tensor({16, 7}), Mask(16, 1)};
  Tape tape;
  BoundParameters bound(tape, params);
  const FeatureSequence f = project_features(tape, bound, input, hp);
  expect_all_zero(f.audio.value());
  expect_all_zero(f.visual.value());
}

TEST(Projection, RejectsWrongRawWidth) {
  const HyperParams hp = small_hp();
  const auto params = ModelParameters::initialize(hp, 12);
  VideoFeatures input{Tensor({16, 6}), Tensor({16, 7}), Mask(16, 1)};
  Tape tape;
  BoundParameters bound(tape, params);
  EXPECT_THROW(project_features(tape, bound, input, hp), ShapeError);
}

TEST(ModalityProbs, ZeroWeightsGiveHalf) {
  HyperParams hp = small_hp();
  auto params = ModelParameters::initialize(hp, 13);
  params.at("meae.audio.w2").fill(0.0);
  Tape tape;
  BoundParameters bound(tape, params);
  std::mt19937_64 rng(14);
  Var x = tape.constant(random_tensor(rng, 16, 8));
  const ModalityProbs p = predict_modality_probs(bound, x, x, hp);
  for (double v : p.audio.value().data()) EXPECT_EQ(v, 0.5);
  for (double v : p.visual.value().data()) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
}

TEST(ModalityProbs, MatchesStepByStepOracle) {
  HyperParams hp = small_hp();
  hp.channels = 2;
  hp.heads = 1;
  hp.categories = 2;
  ModelParameters params = ModelParameters::initialize(hp, 15);
  params.at("meae.audio.w1") = Tensor::matrix({{0.5, -1.0}, {2.0, 0.25}});
  params.at("meae.audio.w2") = Tensor::matrix({{1.0, -0.5}, {0.3, 0.8}});
  const Tensor x = Tensor::matrix({{1.0, -2.0}, {0.5, 0.5}, {-1.0, 3.0}});
  Tape tape;
  BoundParameters bound(tape, params);
  const ModalityProbs p = predict_modality_probs(bound, tape.constant(x), tape.constant(x), hp);
  const Tensor& w1 = params.at("meae.audio.w1");
  const Tensor& w2 = params.at("meae.audio.w2");
  for (std::size_t t = 0; t < 3; ++t) {
    double h[2];
    for (std::size_t j = 0; j < 2; ++j) {
      const double z = x(t, 0) * w1(0, j) + x(t, 1) * w1(1, j);
      h[j] = z > 0 ? z : 0.01 * z;
    }
    for (std::size_t c = 0; c < 2; ++c) {
      EXPECT_NEAR(p.audio.value()(t, c), sigmoid_ref(h[0] * w2(0, c) + h[1] * w2(1, c)), 1e-14);
    }
  }
}

TEST(FuseAnchors, ZeroAlignLeavesGlobalFeatures) {
  HyperParams hp = small_hp();
  auto params = ModelParameters::initialize(hp, 16);
  params.at("csai.audio.align").fill(0.0);
  params.at("csai.visual.align").fill(0.0);
  std::mt19937_64 rng(17);
  const VideoFeatures input = random_video(rng, hp);
  Tape tape;
  BoundParameters bound(tape, params);
  const ForwardResult r = forward(tape, bound, input, hp);
  EXPECT_EQ(r.anchors.fused_audio.value(), r.anchors.global_audio.value());
  EXPECT_EQ(r.anchors.fused_visual.value(), r.anchors.global_visual.value());
  // The global block is literally the gathered rows.
  for (std::size_t k = 0; k < 3; ++k) {
    const std::size_t t = r.anchors.indices.global[k];
    for (std::size_t j = 0; j < 8; ++j) EXPECT_EQ(r.anchors.global_audio.value()(k, j), r.features.audio.value()(t, j));
  }
}

TEST(FuseAnchors, SingleModalityZeroesTheOtherBlock) {
  HyperParams hp = small_hp();
  hp.anchor_modality = AnchorModality::visual;
  auto params = ModelParameters::initialize(hp, 18);
  std::mt19937_64 rng(19);
  const VideoFeatures input = random_video(rng, hp);
  Tape tape;
  BoundParameters bound(tape, params);
  const ForwardResult r = forward(tape, bound, input, hp);
  // With the audio block zeroed, Z_av depends only on the lower half of W3.
  Tensor expected({3, 8});
  const Tensor& w3 = params.at("csai.w3");
  const Tensor& w4 = params.at("csai.w4");
  const Tensor& zv = r.anchors.fused_visual.value();
  for (std::size_t k = 0; k < 3; ++k) {
    std::vector<double> mid(16, 0.0);
    for (std::size_t j = 0; j < 16; ++j)
      for (std::size_t i = 0; i < 8; ++i) mid[j] += zv(k, i) * w3(8 + i, j);
    for (std::size_t o = 0; o < 8; ++o)
      for (std::size_t j = 0; j < 16; ++j) expected(k, o) += mid[j] * w4(j, o);
  }
  for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_NEAR(r.anchors.fused.value()[i], expected[i], 1e-12);
}

TEST(Propagation, ZeroValueMapIsResidualIdentity) {
  HyperParams hp = small_hp();
  auto params = ModelParameters::initialize(hp, 20);
  params.at("atp.audio.wv").fill(0.0);
  params.at("atp.visual.wv").fill(0.0);
  std::mt19937_64 rng(21);
  const VideoFeatures input = random_video(rng, hp);
  Tape tape;
  BoundParameters bound(tape, params);
  const ForwardResult r = forward(tape, bound, input, hp);
  EXPECT_EQ(r.propagation.audio.value(), r.encoding.audio.value());
  EXPECT_EQ(r.propagation.visual.value(), r.encoding.visual.value());
}

TEST(Classify, ForegroundAveragesAndSuppresses) {
  HyperParams hp = small_hp();
  auto params = ModelParameters::initialize(hp, 22);
  std::mt19937_64 rng(23);
  // Identical heads on identical streams: the averaged weight equals either one.
  params.at("cls.fg_visual.weight") = params.at("cls.fg_audio.weight");
  params.at("cls.fg_visual.bias") = params.at("cls.fg_audio.bias");
  {
    Tape tape;
    BoundParameters bound(tape, params);
    Var a = tape.constant(random_tensor(rng, 16, 8));
    const PredictionOutputs same = classify(bound, a, a, Mask(16, 1), hp);
    EXPECT_EQ(same.foreground.value(), same.foreground_audio.value());
  }

  params.at("cls.fg_audio.weight").fill(0.0);
  params.at("cls.fg_visual.weight").fill(0.0);
  params.at("cls.fg_audio.bias").fill(-800.0);
  params.at("cls.fg_visual.bias").fill(-800.0);
  Tape tape2;
  BoundParameters bound2(tape2, params);
  Var x = tape2.constant(random_tensor(rng, 16, 8));
  const PredictionOutputs off = classify(bound2, x, x, Mask(16, 1), hp);
  expect_all_zero(off.event_probs.value());
}

TEST(Classify, MatchesStepByStepOracle) {
  HyperParams hp = small_hp();
  hp.channels = 2;
  hp.heads = 1;
  hp.categories = 2;
  hp.mil_pool = MilPool::mean;
  ModelParameters params = ModelParameters::initialize(hp, 24);
  const Tensor fa = Tensor::matrix({{0.2, -0.4}, {1.0, 0.3}, {-0.5, 0.9}});
  const Tensor fv = Tensor::matrix({{-0.1, 0.6}, {0.7, -0.8}, {0.4, 0.4}});
  Tape tape;
  BoundParameters bound(tape, params);
  const Mask valid{1, 1, 0};
  const PredictionOutputs out = classify(bound, tape.constant(fa), tape.constant(fv), valid, hp);

  const Tensor& wa = params.at("cls.fg_audio.weight");
  const Tensor& ba = params.at("cls.fg_audio.bias");
  const Tensor& wv = params.at("cls.fg_visual.weight");
  const Tensor& bv = params.at("cls.fg_visual.bias");
  const Tensor& we = params.at("cls.event.weight");
  const Tensor& be = params.at("cls.event.bias");
  std::vector<double> pooled(2, 0.0);
  for (std::size_t t = 0; t < 3; ++t) {
    const double w_a = sigmoid_ref(fa(t, 0) * wa(0, 0) + fa(t, 1) * wa(1, 0) + ba(0, 0));
    const double w_v = sigmoid_ref(fv(t, 0) * wv(0, 0) + fv(t, 1) * wv(1, 0) + bv(0, 0));
    for (std::size_t c = 0; c < 2; ++c) {
      const double z = fa(t, 0) * we(0, c) + fa(t, 1) * we(1, c) + fv(t, 0) * we(2, c) + fv(t, 1) * we(3, c) + be(0, c);
      const double p = valid[t] ? sigmoid_ref(z) * (w_a + w_v) / 2.0 : 0.0;
      EXPECT_NEAR(out.event_probs.value()(t, c), p, 1e-14);
      if (valid[t]) pooled[c] += p / 2.0;
    }
  }
  for (std::size_t c = 0; c < 2; ++c) EXPECT_NEAR(out.video_probs.value()(0, c), pooled[c], 1e-14);
}

TEST(Predict, ReportsGlobalAnchorsEvenWhenBypassed) {
  HyperParams hp = small_hp();
  hp.bypass_anchors = true;
  const auto params = ModelParameters::initialize(hp, 25);
  std::mt19937_64 rng(26);
  const Prediction p = predict(params, random_video(rng, hp, 1), hp);
  EXPECT_EQ(p.anchors.global.size(), hp.global_anchors);
  EXPECT_EQ(p.video_probs.size(), hp.categories);
}

// Finite-difference checks, one per component, on small toys.

TEST(Gradients, Projection) {
  HyperParams hp = small_hp();
  hp.max_steps = 4;
  hp.channels = 4;
  hp.windows = 2;
  hp.global_anchors = 2;
  const auto params = ModelParameters::initialize(hp, 27);
  std::mt19937_64 rng(28);
  const auto checks = check_model_gradients(params, random_video(rng, hp), {1, 0, 0, 1}, hp, "proj.");
  ASSERT_EQ(checks.size(), 8u);
  for (const auto& c : checks) EXPECT_LT(c.result.max_rel_error, 1e-4) << c.name;
}

TEST(Gradients, AnchorFusion) {
  HyperParams hp = small_hp();
  hp.max_steps = 6;
  hp.channels = 3;
  hp.heads = 1;
  hp.global_anchors = 2;
  hp.windows = 2;
  hp.local_anchors = 1;
  const auto params = ModelParameters::initialize(hp, 29);
  std::mt19937_64 rng(30);
  const auto checks = check_model_gradients(params, random_video(rng, hp), {0, 1, 0, 1}, hp, "csai.");
  ASSERT_EQ(checks.size(), 4u);
  for (const auto& c : checks) EXPECT_LT(c.result.max_rel_error, 1e-4) << c.name;
}

TEST(Gradients, UnimodalTransformer) {
  HyperParams hp = small_hp();
  hp.max_steps = 4;
  hp.channels = 4;
  hp.heads = 2;
  hp.windows = 2;
  hp.global_anchors = 2;
  const auto params = ModelParameters::initialize(hp, 31);
  std::mt19937_64 rng(32);
  const auto checks = check_model_gradients(params, random_video(rng, hp, 1), {1, 1, 0, 0}, hp, "enc.");
  for (const auto& c : checks) EXPECT_LT(c.result.max_rel_error, 1e-4) << c.name;
}

TEST(Gradients, Propagation) {
  HyperParams hp = small_hp();
  hp.max_steps = 4;
  hp.channels = 3;
  hp.heads = 1;
  hp.global_anchors = 2;
  hp.windows = 2;
  const auto params = ModelParameters::initialize(hp, 33);
  std::mt19937_64 rng(34);
  const auto checks = check_model_gradients(params, random_video(rng, hp), {0, 0, 1, 1}, hp, "atp.");
  ASSERT_EQ(checks.size(), 6u);
  for (const auto& c : checks) {
    EXPECT_LT(c.result.max_rel_error, 1e-4)
        << c.name << "[" << c.result.worst_index << "] analytic " << c.result.worst_analytic << " numeric "
        << c.result.worst_numeric;
  }
}

TEST(Gradients, EveryParameterReceivesFiniteGradient) {
  const HyperParams hp = small_hp();
  const auto params = ModelParameters::initialize(hp, 35);
  std::mt19937_64 rng(36);
  const VideoFeatures input = random_video(rng, hp, 5);
  Tape tape;
  BoundParameters bound(tape, params);
  const ForwardResult r = forward(tape, bound, input, hp);
  tape.backward(compute_loss(r.outputs, std::vector<double>{1, 0, 1, 0}, TrainConfig{}));
  const auto grads = bound.gradients();
  for (std::size_t i = 0; i < grads.size(); ++i) EXPECT_TRUE(grads[i].all_finite()) << params.names()[i];
}
