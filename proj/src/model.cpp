#include "clasp/model.hpp"

#include <cmath>
#include <random>

#include "clasp/anchors.hpp"
#include "clasp/errors.hpp"

namespace clasp {

// ---------------------------------------------------------------------------
// HyperParams

void HyperParams::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("invalid hyperparameters: " + what); };
  if (max_steps == 0) fail("T must be positive");
  if (channels == 0) fail("d must be positive");
  if (categories == 0) fail("C must be positive");
  if (audio_dim == 0 || visual_dim == 0) fail("raw feature widths must be positive");
  if (global_anchors == 0 || global_anchors > max_steps) fail("K must lie in [1, T]");
  if (windows == 0) fail("M must be at least 1");
  if (windows > max_steps) fail("M must not exceed T");
  if (local_anchors == 0 || local_anchors > max_steps / windows) fail("k must lie in [1, floor(T/M)]");
  if (heads == 0 || channels % heads != 0) fail("d must be divisible by the head count");
  if (conv_kernel == 0) fail("conv kernel must be positive");
  if (!(leaky_slope >= 0.0 && leaky_slope < 1.0)) fail("LeakyReLU slope must lie in [0, 1)");
}

// ---------------------------------------------------------------------------
// Parameters

std::vector<std::pair<std::string, Shape>> parameter_layout(const HyperParams& hp) {
  const std::size_t d = hp.channels, c = hp.categories, kern = hp.conv_kernel;
  std::vector<std::pair<std::string, Shape>> layout;
  auto add = [&layout](std::string name, Shape shape) { layout.emplace_back(std::move(name), std::move(shape)); };

  for (const auto& [mod, raw] : {std::pair{"audio", hp.audio_dim}, std::pair{"visual", hp.visual_dim}}) {
    const std::string p = std::string("proj.") + mod;
    add(p + ".conv1.weight", {kern * raw, d});
    if (hp.projection_bias) add(p + ".conv1.bias", {1, d});
    add(p + ".conv2.weight", {kern * d, d});
    if (hp.projection_bias) add(p + ".conv2.bias", {1, d});
  }
  for (const char* mod : {"audio", "visual"}) {
    const std::string p = std::string("meae.") + mod;
    add(p + ".w1", {d, d});
    add(p + ".w2", {d, c});
  }
  for (const char* mod : {"audio", "visual"}) {
    add(std::string("csai.") + mod + ".align", {hp.global_anchors, hp.windows * hp.local_anchors});
  }
  add("csai.w3", {2 * d, 2 * d});
  add("csai.w4", {2 * d, d});
  for (const char* mod : {"audio", "visual"}) {
    const std::string p = std::string("enc.") + mod;
    add(p + ".ln1.gamma", {1, d});
    add(p + ".ln1.beta", {1, d});
    for (const char* w : {"q", "k", "v", "o"}) {
      add(p + ".attn.w" + w, {d, d});
      add(p + ".attn.b" + w, {1, d});
    }
    add(p + ".ln2.gamma", {1, d});
    add(p + ".ln2.beta", {1, d});
    add(p + ".ff.w1", {d, 2 * d});
    add(p + ".ff.b1", {1, 2 * d});
    add(p + ".ff.w2", {2 * d, d});
    add(p + ".ff.b2", {1, d});
  }
  for (const char* mod : {"audio", "visual"}) {
    const std::string p = std::string("atp.") + mod;
    add(p + ".wq", {d, d});
    add(p + ".wk", {d, d});
    add(p + ".wv", {d, d});
  }
  add("cls.fg_audio.weight", {d, 1});
  add("cls.fg_audio.bias", {1, 1});
  add("cls.fg_visual.weight", {d, 1});
  add("cls.fg_visual.bias", {1, 1});
  add("cls.event.weight", {2 * d, c});
  add("cls.event.bias", {1, c});
  return layout;
}

ModelParameters ModelParameters::initialize(const HyperParams& hp, std::uint64_t seed) {
  hp.validate();
  std::mt19937_64 rng(seed);
  ModelParameters params;
  std::size_t fan_in = 1;
  for (auto& [name, shape] : parameter_layout(hp)) {
    Tensor value(shape);
    const bool is_norm = name.ends_with(".gamma") || name.ends_with(".beta");
    if (is_norm) {
      if (name.ends_with(".gamma")) value.fill(1.0);
    } else {
      // Biases follow the weight registered just before them.
      const bool is_bias = name.ends_with(".bias") || name.find(".attn.b") != std::string::npos ||
                           name.find(".ff.b") != std::string::npos;
      // Weights are stored [in, out] except the aligning map, which
      // left-multiplies the Mk stacked anchors.
      if (!is_bias) fan_in = name.ends_with(".align") ? shape[1] : shape[0];
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (double& v : value.data()) v = dist(rng);
    }
    params.add(name, std::move(value));
  }
  return params;
}

void ModelParameters::add(std::string name, Tensor value) {
  if (index_.contains(name)) throw ContractError("duplicate parameter " + name);
  index_.emplace(name, values_.size());
  names_.push_back(std::move(name));
  values_.push_back(std::move(value));
}

bool ModelParameters::contains(std::string_view name) const { return index_.contains(std::string(name)); }

std::size_t ModelParameters::index_of(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw ContractError("unknown parameter " + std::string(name));
  return it->second;
}

const Tensor& ModelParameters::at(std::string_view name) const { return values_[index_of(name)]; }

Tensor& ModelParameters::at(std::string_view name) {
  return const_cast<Tensor&>(static_cast<const ModelParameters&>(*this).at(name));
}

std::size_t ModelParameters::scalar_count() const {
  std::size_t n = 0;
  for (const auto& t : values_) n += t.size();
  return n;
}

void check_parameters(const ModelParameters& params, const HyperParams& hp) {
  const auto layout = parameter_layout(hp);
  if (layout.size() != params.size()) {
    throw ShapeError("parameter set has " + std::to_string(params.size()) + " tensors, configuration expects " +
                     std::to_string(layout.size()));
  }
  for (std::size_t i = 0; i < layout.size(); ++i) {
    if (params.names()[i] != layout[i].first) {
      throw ShapeError("parameter " + std::to_string(i) + " is " + params.names()[i] + ", expected " +
                       layout[i].first);
    }
    if (params.tensors()[i].shape() != layout[i].second) {
      throw ShapeError("parameter " + layout[i].first + " has shape " + shape_str(params.tensors()[i].shape()) +
                       ", expected " + shape_str(layout[i].second));
    }
  }
}

BoundParameters::BoundParameters(Tape& tape, const ModelParameters& params, bool requires_grad) : params_(&params) {
  vars_.reserve(params.size());
  for (const Tensor& t : params.tensors()) vars_.push_back(tape.leaf(t, requires_grad));
}

Var BoundParameters::operator[](std::string_view name) const { return vars_[params_->index_of(name)]; }

std::vector<Tensor> BoundParameters::gradients() const {
  std::vector<Tensor> out;
  out.reserve(vars_.size());
  for (const Var& v : vars_) out.push_back(v.grad());
  return out;
}

// ---------------------------------------------------------------------------
// Forward pieces

Var mil_pool(Var probs, const Mask& valid, MilPool mode) {
  return mode == MilPool::mean ? masked_mean_rows(probs, valid) : masked_max_rows(probs, valid);
}

Tensor sinusoidal_positions(std::size_t steps, std::size_t channels) {
  Tensor pe({steps, channels});
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t i = 0; i < channels; i += 2) {
      const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(channels));
      pe(t, i) = std::sin(static_cast<double>(t) * freq);
      if (i + 1 < channels) pe(t, i + 1) = std::cos(static_cast<double>(t) * freq);
    }
  }
  return pe;
}

namespace {

Var project_modality(Tape& tape, const BoundParameters& params, const Tensor& raw, const Mask& valid,
                     const std::string& prefix, const HyperParams& hp) {
  Var h = tape.constant(raw);
  for (const char* layer : {".conv1", ".conv2"}) {
    h = conv1d(h, params[prefix + layer + ".weight"], hp.conv_kernel);
    if (hp.projection_bias) h = add_row(h, params[prefix + layer + ".bias"]);
    // Re-masking keeps padded rows at zero, which the next layer sees as
    // ordinary zero padding.
    h = mask_rows(relu(h), valid);
  }
  return h;
}

Var linear(const BoundParameters& params, Var x, const std::string& weight, const std::string& bias) {
  return add_row(matmul(x, params[weight]), params[bias]);
}

// Pre-norm transformer block: x + MHA(LN(x)), then + FFN(LN(·)).
Var transformer_block(const BoundParameters& params, Var x, const Mask& valid, const std::string& p,
                      const HyperParams& hp, std::vector<Var>& attention) {
  const std::size_t d = hp.channels, head_dim = d / hp.heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));

  Var h = layer_norm(x, params[p + ".ln1.gamma"], params[p + ".ln1.beta"]);
  Var q = linear(params, h, p + ".attn.wq", p + ".attn.bq");
  Var k = linear(params, h, p + ".attn.wk", p + ".attn.bk");
  Var v = linear(params, h, p + ".attn.wv", p + ".attn.bv");
  std::vector<Var> heads;
  heads.reserve(hp.heads);
  for (std::size_t i = 0; i < hp.heads; ++i) {
    Var qh = slice_cols(q, i * head_dim, head_dim);
    Var kh = slice_cols(k, i * head_dim, head_dim);
    Var vh = slice_cols(v, i * head_dim, head_dim);
    Var weights = masked_softmax_rows(scale(matmul(qh, transpose(kh)), inv_sqrt), valid);
    attention.push_back(weights);
    heads.push_back(matmul(weights, vh));
  }
  Var attended = hp.heads == 1 ? heads.front() : concat_cols(heads);
  Var x1 = add(x, linear(params, attended, p + ".attn.wo", p + ".attn.bo"));

  Var h2 = layer_norm(x1, params[p + ".ln2.gamma"], params[p + ".ln2.beta"]);
  Var ff = linear(params, relu(linear(params, h2, p + ".ff.w1", p + ".ff.b1")), p + ".ff.w2", p + ".ff.b2");
  return mask_rows(add(x1, ff), valid);
}

Var aggregate_modality(Var global, Var local) {
  if (global.valid() && local.valid()) return add(global, local);
  return global.valid() ? global : local;
}

}  // namespace

FeatureSequence project_features(Tape& tape, const BoundParameters& params, const VideoFeatures& input,
                                 const HyperParams& hp) {
  const std::size_t steps = input.steps();
  if (steps == 0) throw ContractError("project_features: empty sequence");
  if (input.audio.rows() != steps || input.visual.rows() != steps) {
    throw ShapeError("project_features: audio " + shape_str(input.audio.shape()) + " / visual " +
                     shape_str(input.visual.shape()) + " for mask of length " + std::to_string(steps));
  }
  if (input.audio.cols() != hp.audio_dim || input.visual.cols() != hp.visual_dim) {
    throw ShapeError("project_features: raw widths " + std::to_string(input.audio.cols()) + "/" +
                     std::to_string(input.visual.cols()) + " do not match model widths " +
                     std::to_string(hp.audio_dim) + "/" + std::to_string(hp.visual_dim));
  }
  FeatureSequence out;
  out.audio = project_modality(tape, params, input.audio, input.valid, "proj.audio", hp);
  out.visual = project_modality(tape, params, input.visual, input.valid, "proj.visual", hp);
  out.valid = input.valid;
  out.raw_audio_dim = input.audio.cols();
  out.raw_visual_dim = input.visual.cols();
  return out;
}

ModalityProbs predict_modality_probs(const BoundParameters& params, Var audio, Var visual, const HyperParams& hp) {
  auto branch = [&](Var x, const std::string& p) {
    return sigmoid(matmul(leaky_relu(matmul(x, params[p + ".w1"]), hp.leaky_slope), params[p + ".w2"]));
  };
  return {branch(audio, "meae.audio"), branch(visual, "meae.visual")};
}

AnchorSet fuse_anchors(Tape& tape, const BoundParameters& params, const FeatureSequence& features,
                       const AnchorIndices& indices, const HyperParams& hp) {
  if (!hp.use_global_anchors && !hp.use_local_anchors) {
    throw ContractError("fuse_anchors: both anchor identification mechanisms are disabled");
  }
  AnchorSet set;
  set.indices = indices;
  if (hp.use_global_anchors) {
    if (indices.global.size() != hp.global_anchors) throw ShapeError("fuse_anchors: expected K global indices");
    set.global_audio = gather_rows(features.audio, indices.global);
    set.global_visual = gather_rows(features.visual, indices.global);
  }
  if (hp.use_local_anchors) {
    if (indices.local.size() != hp.windows) throw ShapeError("fuse_anchors: expected M local windows");
    std::vector<std::size_t> flat;
    flat.reserve(hp.windows * hp.local_anchors);
    for (const auto& window : indices.local) {
      if (window.size() != hp.local_anchors) throw ShapeError("fuse_anchors: expected k indices per window");
      flat.insert(flat.end(), window.begin(), window.end());
    }
    // The aligning map mixes the Mk local anchors into K rows, shared over channels.
    set.local_audio = matmul(params["csai.audio.align"], gather_rows(features.audio, flat));
    set.local_visual = matmul(params["csai.visual.align"], gather_rows(features.visual, flat));
  }
  set.fused_audio = aggregate_modality(set.global_audio, set.local_audio);
  set.fused_visual = aggregate_modality(set.global_visual, set.local_visual);

  Var audio_part = set.fused_audio, visual_part = set.fused_visual;
  const Tensor zeros({hp.global_anchors, hp.channels});
  if (hp.anchor_modality == AnchorModality::audio) visual_part = tape.constant(zeros);
  if (hp.anchor_modality == AnchorModality::visual) audio_part = tape.constant(zeros);
  set.fused = matmul(matmul(concat_cols({audio_part, visual_part}), params["csai.w3"]), params["csai.w4"]);
  return set;
}

UnimodalEncoding encode_unimodal(Tape& tape, const BoundParameters& params, const FeatureSequence& features,
                                 const HyperParams& hp) {
  Var audio = features.audio, visual = features.visual;
  if (hp.positional_encoding) {
    const Var positions = tape.constant(sinusoidal_positions(features.valid.size(), hp.channels));
    audio = add(audio, positions);
    visual = add(visual, positions);
  }
  UnimodalEncoding out;
  out.audio = transformer_block(params, audio, features.valid, "enc.audio", hp, out.audio_attention);
  out.visual = transformer_block(params, visual, features.valid, "enc.visual", hp, out.visual_attention);
  return out;
}

Propagation propagate_anchors(const BoundParameters& params, Var encoded_audio, Var encoded_visual, Var anchors,
                              const HyperParams& hp) {
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hp.channels));
  if (anchors.cols() != hp.channels) throw ShapeError("propagate_anchors: anchor features must be K×d");
  auto branch = [&](Var f, const std::string& p, Var& attention) {
    Var q = matmul(f, params[p + ".wq"]);
    Var k = matmul(anchors, params[p + ".wk"]);
    Var v = matmul(anchors, params[p + ".wv"]);
    attention = softmax_rows(scale(matmul(q, transpose(k)), inv_sqrt));
    return add(f, matmul(attention, v));
  };
  Propagation out;
  out.audio = branch(encoded_audio, "atp.audio", out.audio_attention);
  out.visual = branch(encoded_visual, "atp.visual", out.visual_attention);
  return out;
}

PredictionOutputs classify(const BoundParameters& params, Var audio, Var visual, const Mask& valid,
                           const HyperParams& hp) {
  PredictionOutputs out;
  out.propagated_audio = audio;
  out.propagated_visual = visual;
  out.foreground_audio = sigmoid(linear(params, audio, "cls.fg_audio.weight", "cls.fg_audio.bias"));
  out.foreground_visual = sigmoid(linear(params, visual, "cls.fg_visual.weight", "cls.fg_visual.bias"));
  out.foreground = scale(add(out.foreground_audio, out.foreground_visual), 0.5);
  Var raw = sigmoid(linear(params, concat_cols({audio, visual}), "cls.event.weight", "cls.event.bias"));
  out.event_probs = mask_rows(mul_col(raw, out.foreground), valid);
  out.video_probs = mil_pool(out.event_probs, valid, hp.mil_pool);
  return out;
}

ForwardResult forward(Tape& tape, const BoundParameters& params, const VideoFeatures& input, const HyperParams& hp,
                      const ForwardOptions& options) {
  ForwardResult r;
  r.features = project_features(tape, params, input, hp);
  r.encoding = encode_unimodal(tape, params, r.features, hp);

  if (hp.agreement_source == AgreementSource::projected) {
    r.modality_probs = predict_modality_probs(params, r.features.audio, r.features.visual, hp);
  } else {
    r.modality_probs = predict_modality_probs(params, r.encoding.audio, r.encoding.visual, hp);
  }
  r.agreement = mutual_agreement(r.modality_probs.audio.value(), r.modality_probs.visual.value(), input.valid,
                                 hp.jsd_variant);

  if (hp.anchors_active()) {
    AnchorIndices indices;
    if (options.fixed_anchors) {
      indices = *options.fixed_anchors;
    } else {
      if (hp.use_global_anchors) indices.global = identify_global_anchors(r.agreement.score, input.valid, hp.global_anchors);
      if (hp.use_local_anchors) {
        indices.local = identify_local_anchors(r.agreement.score, input.valid, hp.windows, hp.local_anchors);
      }
    }
    r.anchors = fuse_anchors(tape, params, r.features, indices, hp);
    r.propagation = propagate_anchors(params, r.encoding.audio, r.encoding.visual, r.anchors.fused, hp);
  } else {
    r.propagation.audio = r.encoding.audio;
    r.propagation.visual = r.encoding.visual;
  }

  r.outputs = classify(params, r.propagation.audio, r.propagation.visual, input.valid, hp);
  r.outputs.encoded_audio = r.encoding.audio;
  r.outputs.encoded_visual = r.encoding.visual;
  r.outputs.audio_video_probs = mil_pool(r.modality_probs.audio, input.valid, hp.mil_pool);
  r.outputs.visual_video_probs = mil_pool(r.modality_probs.visual, input.valid, hp.mil_pool);
  return r;
}

Prediction predict(const ModelParameters& params, const VideoFeatures& input, const HyperParams& hp) {
  Tape tape;
  BoundParameters bound(tape, params, false);
  ForwardResult r = forward(tape, bound, input, hp);
  Prediction out;
  out.event_probs = r.outputs.event_probs.value();
  const auto& video = r.outputs.video_probs.value().values();
  out.video_probs.assign(video.begin(), video.end());
  out.anchors = r.anchors.indices;
  if (out.anchors.global.empty()) {
    out.anchors.global = identify_global_anchors(r.agreement.score, input.valid, hp.global_anchors);
  }
  out.agreement = std::move(r.agreement);
  return out;
}

}  // namespace clasp
