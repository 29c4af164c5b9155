#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "clasp/data_io.hpp"
#include "clasp/model.hpp"

namespace clasp {

struct TrainConfig {
  std::size_t epochs = 40;
  std::size_t batch_size = 16;
  double learning_rate = 1e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_av = 1.0;  // λ_av
  double weight_a = 1.0;   // λ_a
  double weight_v = 1.0;   // λ_v
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 0;  // epochs; 0 = only at the end
  std::size_t workers = 1;           // threads per batch; results do not depend on it

  void validate() const;  // throws ConfigError
};

struct OptimizerState {
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
  std::uint64_t step = 0;

  static OptimizerState zeros_like(const ModelParameters& params);
  friend bool operator==(const OptimizerState&, const OptimizerState&) = default;
};

// Plain-tensor MIL pooling over valid rows; ContractError if none is valid.
std::vector<double> mil_pool(const Tensor& probs, const Mask& valid, MilPool mode);

// λ_av·BCE(p̂, y) + λ_a·BCE(pooled P_a, y) + λ_v·BCE(pooled P_v, y).
Var compute_loss(const PredictionOutputs& outputs, std::span<const double> label, const TrainConfig& cfg);

// One bias-corrected Adam update in place. Throws NumericError naming the
// first parameter whose gradient is not finite, before touching anything.
void adam_step(ModelParameters& params, const std::vector<Tensor>& grads, OptimizerState& state,
               const TrainConfig& cfg);

struct BatchGradient {
  double loss = 0.0;          // mean over the batch
  std::vector<Tensor> grads;  // mean over the batch, in parameter order
};

// Per-video tapes, optionally on worker threads; per-video results are
// reduced in video-id order so the sum is the same for any worker count.
BatchGradient batch_gradient(const ModelParameters& params, std::span<const TrainingExample* const> batch,
                             const HyperParams& hp, const TrainConfig& cfg);

struct TrainState {
  ModelParameters params;
  OptimizerState optimizer;
  std::size_t epochs_done = 0;
  std::vector<double> loss_curve;  // per-epoch mean loss so far
};

// Called after every epoch with the state reached so far.
using EpochCallback = std::function<void(const TrainState&)>;

// Trains from scratch, or continues `resume` up to cfg.epochs. Examples carry
// no intervals, so training cannot depend on them.
TrainState train(std::span<const TrainingExample> data, const HyperParams& hp, const TrainConfig& cfg,
                 const TrainState* resume = nullptr, const EpochCallback& on_epoch = {});

// Epoch-specific permutation of [0, n).
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch);

}  // namespace clasp
