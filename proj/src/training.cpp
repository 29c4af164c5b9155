#include "clasp/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

#include "clasp/errors.hpp"
#include "clasp/logging.hpp"
#include "clasp/synth.hpp"

namespace clasp {

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("invalid train config: " + what); };
  if (epochs < 1) fail("epochs must be at least 1");
  if (batch_size < 1) fail("batch_size must be at least 1");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) fail("learning_rate must be positive");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
    fail("Adam betas must lie in [0,1)");
  }
  if (!(adam_eps > 0.0)) fail("adam_eps must be positive");
  for (double w : {weight_av, weight_a, weight_v})
    if (!(w >= 0.0) || !std::isfinite(w)) fail("loss weights must be finite and non-negative");
  if (workers < 1) fail("workers must be at least 1");
}

OptimizerState OptimizerState::zeros_like(const ModelParameters& params) {
  OptimizerState s;
  for (const Tensor& t : params.tensors()) {
    s.first_moment.emplace_back(t.shape());
    s.second_moment.emplace_back(t.shape());
  }
  return s;
}

std::vector<double> mil_pool(const Tensor& probs, const Mask& valid, MilPool mode) {
  if (valid.size() != probs.rows()) {
    throw ShapeError("mil_pool: mask of " + std::to_string(valid.size()) + " for " + shape_str(probs.shape()));
  }
  const std::size_t cols = probs.cols();
  std::vector<double> out(cols, mode == MilPool::mean ? 0.0 : -std::numeric_limits<double>::infinity());
  std::size_t count = 0;
  for (std::size_t t = 0; t < probs.rows(); ++t) {
    if (!valid[t]) continue;
    ++count;
    for (std::size_t c = 0; c < cols; ++c)
      out[c] = mode == MilPool::mean ? out[c] + probs(t, c) : std::max(out[c], probs(t, c));
  }
  if (count == 0) throw ContractError("mil_pool: no valid timesteps");
  if (mode == MilPool::mean)
    for (double& v : out) v /= static_cast<double>(count);
  return out;
}

Var compute_loss(const PredictionOutputs& outputs, std::span<const double> label, const TrainConfig& cfg) {
  Var total = scale(binary_cross_entropy(outputs.video_probs, label), cfg.weight_av);
  total = add(total, scale(binary_cross_entropy(outputs.audio_video_probs, label), cfg.weight_a));
  return add(total, scale(binary_cross_entropy(outputs.visual_video_probs, label), cfg.weight_v));
}

void adam_step(ModelParameters& params, const std::vector<Tensor>& grads, OptimizerState& state,
               const TrainConfig& cfg) {
  auto& values = params.tensors();
  if (grads.size() != values.size() || state.first_moment.size() != values.size() ||
      state.second_moment.size() != values.size()) {
    throw ShapeError("adam_step: " + std::to_string(grads.size()) + " gradients and " +
                     std::to_string(state.first_moment.size()) + " moment buffers for " +
                     std::to_string(values.size()) + " parameters");
  }
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (grads[i].shape() != values[i].shape() || state.first_moment[i].shape() != values[i].shape() ||
        state.second_moment[i].shape() != values[i].shape()) {
      throw ShapeError("adam_step: shape mismatch for " + params.names()[i]);
    }
    if (!grads[i].all_finite()) throw NumericError("non-finite gradient for parameter " + params.names()[i]);
  }

  ++state.step;
  const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
  const double correction1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double correction2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < values.size(); ++i) {
    auto p = values[i].data();
    auto g = grads[i].data();
    auto m = state.first_moment[i].data();
    auto v = state.second_moment[i].data();
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = b1 * m[j] + (1.0 - b1) * g[j];
      v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
      const double m_hat = m[j] / correction1;
      const double v_hat = v[j] / correction2;
      p[j] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.adam_eps);
    }
  }
}

namespace {

struct VideoGradient {
  double loss = 0.0;
  std::vector<Tensor> grads;
};

VideoGradient video_gradient(const ModelParameters& params, const TrainingExample& ex, const HyperParams& hp,
                             const TrainConfig& cfg) {
  Tape tape;
  BoundParameters bound(tape, params, true);
  ForwardResult r = forward(tape, bound, ex.features, hp);
  Var loss = compute_loss(r.outputs, ex.label, cfg);
  tape.backward(loss);
  return {loss.value().item(), bound.gradients()};
}

}  // namespace

BatchGradient batch_gradient(const ModelParameters& params, std::span<const TrainingExample* const> batch,
                             const HyperParams& hp, const TrainConfig& cfg) {
  if (batch.empty()) throw ContractError("batch_gradient: empty batch");
  std::vector<VideoGradient> per_video(batch.size());
  std::vector<std::exception_ptr> errors(batch.size());

  const std::size_t workers = std::min(cfg.workers, batch.size());
  auto run = [&](std::size_t first) {
    for (std::size_t i = first; i < batch.size(); i += workers) {
      try {
        per_video[i] = video_gradient(params, *batch[i], hp, cfg);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (workers <= 1) {
    run(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(run, w);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  // Reduce in video-id order so the sum does not depend on shuffling within
  // the batch or on which worker finished first.
  std::vector<std::size_t> order(batch.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return batch[a]->id < batch[b]->id; });
  BatchGradient out;
  out.grads = std::move(per_video[order[0]].grads);
  out.loss = per_video[order[0]].loss;
  for (std::size_t r = 1; r < order.size(); ++r) {
    const VideoGradient& g = per_video[order[r]];
    out.loss += g.loss;
    for (std::size_t p = 0; p < out.grads.size(); ++p) accumulate(out.grads[p], g.grads[p]);
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  out.loss *= inv;
  for (Tensor& g : out.grads)
    for (double& v : g.data()) v *= inv;
  return out;
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(mix_seed(seed, 0x5eed0000ull + epoch));
  // Fisher-Yates by hand: std::shuffle's draw sequence is unspecified.
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = std::uniform_int_distribution<std::size_t>(0, i - 1)(rng);
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

TrainState train(std::span<const TrainingExample> data, const HyperParams& hp, const TrainConfig& cfg,
                 const TrainState* resume, const EpochCallback& on_epoch) {
  hp.validate();
  cfg.validate();
  if (data.empty()) throw ContractError("train: empty dataset");
  for (const auto& ex : data) {
    if (ex.label.size() != hp.categories) {
      throw ShapeError("train: video " + ex.id + " has " + std::to_string(ex.label.size()) +
                       " labels, model expects " + std::to_string(hp.categories));
    }
  }

  TrainState state;
  if (resume) {
    state = *resume;
    check_parameters(state.params, hp);
  } else {
    state.params = ModelParameters::initialize(hp, cfg.seed);
    state.optimizer = OptimizerState::zeros_like(state.params);
  }

  std::vector<const TrainingExample*> batch;
  for (std::size_t epoch = state.epochs_done; epoch < cfg.epochs; ++epoch) {
    const auto order = epoch_order(data.size(), cfg.seed, epoch);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      batch.clear();
      for (std::size_t i = start; i < std::min(order.size(), start + cfg.batch_size); ++i)
        batch.push_back(&data[order[i]]);
      BatchGradient g = batch_gradient(state.params, batch, hp, cfg);
      if (!std::isfinite(g.loss)) {
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch + 1));
      }
      adam_step(state.params, g.grads, state.optimizer, cfg);
      loss_sum += g.loss;
      ++batches;
    }
    state.loss_curve.push_back(loss_sum / static_cast<double>(batches));
    state.epochs_done = epoch + 1;
    std::ostringstream msg;
    msg << "epoch " << state.epochs_done << "/" << cfg.epochs << " loss " << state.loss_curve.back();
    log_info(msg.str());
    if (on_epoch) on_epoch(state);
  }
  return state;
}

}  // namespace clasp
