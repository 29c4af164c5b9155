#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "clasp/agreement.hpp"
#include "clasp/autodiff.hpp"
#include "clasp/features.hpp"

namespace clasp {

enum class MilPool { mean, max };
enum class AnchorModality { both, audio, visual };
// Which features feed the per-modality classifiers that drive agreement:
// the projected inputs or the unimodal transformer outputs.
enum class AgreementSource { projected, encoded };

struct HyperParams {
  std::size_t max_steps = 224;   // T
  std::size_t channels = 64;     // d, shared feature width
  std::size_t categories = 0;    // C
  std::size_t audio_dim = 128;   // raw audio feature width
  std::size_t visual_dim = 2048; // raw visual feature width
  std::size_t global_anchors = 10;  // K
  std::size_t local_anchors = 4;    // k, per window
  std::size_t windows = 14;         // M
  std::size_t heads = 4;            // unimodal transformer heads
  std::size_t conv_kernel = 3;
  double leaky_slope = 0.01;
  bool projection_bias = true;
  bool positional_encoding = true;  // sinusoidal, added before the encoder
  JsdVariant jsd_variant = JsdVariant::standard;
  MilPool mil_pool = MilPool::mean;

  // Ablation switches.
  bool use_global_anchors = true;
  bool use_local_anchors = true;
  bool bypass_anchors = false;
  AnchorModality anchor_modality = AnchorModality::both;
  AgreementSource agreement_source = AgreementSource::projected;

  // Throws ConfigError on an inconsistent configuration.
  void validate() const;
  // Anchors reach the temporal features only if some identification
  // mechanism is on and propagation is not bypassed.
  bool anchors_active() const { return !bypass_anchors && (use_global_anchors || use_local_anchors); }
};

// Named parameter tensors in a fixed enumeration order.
class ModelParameters {
 public:
  static ModelParameters initialize(const HyperParams& hp, std::uint64_t seed);

  void add(std::string name, Tensor value);
  bool contains(std::string_view name) const;
  std::size_t index_of(std::string_view name) const;
  const Tensor& at(std::string_view name) const;
  Tensor& at(std::string_view name);

  std::size_t size() const { return values_.size(); }
  const std::vector<std::string>& names() const { return names_; }
  std::vector<Tensor>& tensors() { return values_; }
  const std::vector<Tensor>& tensors() const { return values_; }
  std::size_t scalar_count() const;

  friend bool operator==(const ModelParameters& a, const ModelParameters& b) {
    return a.names_ == b.names_ && a.values_ == b.values_;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> values_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Parameter names and shapes implied by `hp`, in enumeration order.
std::vector<std::pair<std::string, Shape>> parameter_layout(const HyperParams& hp);

// Throws ShapeError naming the first parameter that does not fit `hp`.
void check_parameters(const ModelParameters& params, const HyperParams& hp);

// ModelParameters bound as leaves of one tape.
class BoundParameters {
 public:
  BoundParameters(Tape& tape, const ModelParameters& params, bool requires_grad = true);

  Var operator[](std::string_view name) const;
  // Gradients after Tape::backward, in parameter order.
  std::vector<Tensor> gradients() const;

 private:
  const ModelParameters* params_;
  std::vector<Var> vars_;
};

// Projected features a, v (T×d) of one video.
struct FeatureSequence {
  Var audio;
  Var visual;
  Mask valid;
  std::size_t raw_audio_dim = 0;
  std::size_t raw_visual_dim = 0;
};

struct ModalityProbs {
  Var audio;   // P_a, T×C
  Var visual;  // P_v, T×C
};

struct AnchorIndices {
  std::vector<std::size_t> global;              // K
  std::vector<std::vector<std::size_t>> local;  // M×k
};

struct AnchorSet {
  AnchorIndices indices;
  Var global_audio, global_visual;  // f^g, K×d (unset when GAI is off)
  Var local_audio, local_visual;    // aligned f^l, K×d (unset when LAI is off)
  Var fused_audio, fused_visual;    // Z_a, Z_v
  Var fused;                        // Z_av, K×d
};

struct UnimodalEncoding {
  Var audio;   // F_A
  Var visual;  // F_V
  std::vector<Var> audio_attention;   // per head, T×T
  std::vector<Var> visual_attention;
};

struct Propagation {
  Var audio;   // F̂_A
  Var visual;  // F̂_V
  Var audio_attention;   // T×K, unset when anchors are bypassed
  Var visual_attention;
};

struct PredictionOutputs {
  Var encoded_audio, encoded_visual;        // F_A, F_V
  Var propagated_audio, propagated_visual;  // F̂_A, F̂_V
  Var foreground_audio, foreground_visual;  // w_a, w_v, T×1
  Var foreground;                           // w̄
  Var event_probs;                          // p_av, T×C after modulation
  Var video_probs;                          // p̂, 1×C
  Var audio_video_probs, visual_video_probs;  // pooled P_a, P_v, 1×C
};

struct ForwardResult {
  FeatureSequence features;
  ModalityProbs modality_probs;
  AgreementTrace agreement;
  AnchorSet anchors;
  UnimodalEncoding encoding;
  Propagation propagation;
  PredictionOutputs outputs;
};

struct ForwardOptions {
  // Reuse these anchor indices instead of selecting from the agreement
  // score. Selection is piecewise constant, so freezing it leaves the
  // gradient unchanged and makes finite differences well defined.
  const AnchorIndices* fixed_anchors = nullptr;
};

// MIL pooling of T×C predictions over valid timesteps, 1×C.
Var mil_pool(Var probs, const Mask& valid, MilPool mode);

Tensor sinusoidal_positions(std::size_t steps, std::size_t channels);

FeatureSequence project_features(Tape& tape, const BoundParameters& params, const VideoFeatures& input,
                                 const HyperParams& hp);

// P_m = sigmoid(LeakyReLU(m·W1) · W2) for each modality.
ModalityProbs predict_modality_probs(const BoundParameters& params, Var audio, Var visual, const HyperParams& hp);

AnchorSet fuse_anchors(Tape& tape, const BoundParameters& params, const FeatureSequence& features,
                       const AnchorIndices& indices, const HyperParams& hp);

UnimodalEncoding encode_unimodal(Tape& tape, const BoundParameters& params, const FeatureSequence& features,
                                 const HyperParams& hp);

// F̂ = F + softmax(F·W^Q (Z·W^K)ᵀ / √d) · Z·W^V, per modality.
Propagation propagate_anchors(const BoundParameters& params, Var encoded_audio, Var encoded_visual, Var anchors,
                              const HyperParams& hp);

PredictionOutputs classify(const BoundParameters& params, Var audio, Var visual, const Mask& valid,
                           const HyperParams& hp);

ForwardResult forward(Tape& tape, const BoundParameters& params, const VideoFeatures& input, const HyperParams& hp,
                      const ForwardOptions& options = {});

// Gradient-free inference for one video.
struct Prediction {
  Tensor event_probs;               // p_av, T×C
  std::vector<double> video_probs;  // p̂
  AgreementTrace agreement;
  AnchorIndices anchors;            // empty when anchors are inactive
};

Prediction predict(const ModelParameters& params, const VideoFeatures& input, const HyperParams& hp);

}  // namespace clasp
