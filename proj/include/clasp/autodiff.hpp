#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "clasp/tensor.hpp"

namespace clasp {

// Per-timestep validity (1 = real segment, 0 = padding).
using Mask = std::vector<std::uint8_t>;

class Tape;

// Handle to a node on a Tape. Cheap to copy; only valid while its tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Tensor& grad() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  bool requires_grad() const;
  bool valid() const noexcept { return tape_ != nullptr; }
  Tape& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Records primitives in execution order, which is already a topological
// order, and replays them in reverse for the gradient sweep. A tape owns all
// of its values and gradients; independent tapes share nothing, so separate
// threads may each drive their own.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = true);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  // Appends the output of a primitive. Throws NumericError if `value` holds a
  // NaN or Inf. `backward` receives the tape and the new node's id.
  Var record(std::string_view op, Tensor value, std::initializer_list<Var> inputs, BackwardFn backward);
  Var record(std::string_view op, Tensor value, const std::vector<Var>& inputs, BackwardFn backward);

  // Zeroes every gradient, seeds d(loss)/d(loss) = 1 and sweeps the tape
  // backwards. Repeated calls give bitwise-identical gradients.
  void backward(Var loss);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  const Tensor& grad(std::size_t id) const;
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::string_view op(std::size_t id) const { return nodes_[id].op; }
  const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_[id].inputs; }
  std::size_t size() const noexcept { return nodes_.size(); }

  // Gradient buffer of an input, for use inside BackwardFn. Callers must check
  // requires_grad(id) first.
  Tensor& grad_buffer(std::size_t id);

 private:
  struct Node {
    std::string_view op;
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool reached = false;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Primitives. All operands must live on the same tape.

Var matmul(Var lhs, Var rhs);
Var transpose(Var x);
Var add(Var a, Var b);
Var add_row(Var x, Var bias);  // x (m×n) + bias (1×n) broadcast over rows
Var mul(Var a, Var b);
Var mul_col(Var x, Var w);  // x (m×n) ⊙ w (m×1) broadcast over columns
Var scale(Var x, double factor);

Var sigmoid(Var x);
Var relu(Var x);
Var leaky_relu(Var x, double slope);

// Row-wise softmax, stabilised by row-max subtraction.
Var softmax_rows(Var x);
// Softmax over the columns with key_valid[j] != 0; masked columns get exactly
// zero weight. Every row needs at least one valid key.
Var masked_softmax_rows(Var x, const Mask& key_valid);

// 1-D temporal convolution, stride 1, zero padding that keeps the length.
// x is T×in, weight is (kernel·in)×out laid out as [tap][in][out].
Var conv1d(Var x, Var weight, std::size_t kernel);

// Row gather. Indices are constants; backward scatter-adds.
Var gather_rows(Var x, std::span<const std::size_t> idx);
Var concat_cols(const std::vector<Var>& parts);
Var slice_cols(Var x, std::size_t start, std::size_t count);

Var sum(Var x);   // 1×1
Var mean(Var x);  // 1×1
Var masked_mean_rows(Var x, const Mask& valid);  // 1×n
Var masked_max_rows(Var x, const Mask& valid);   // 1×n, first maximal row wins
Var mask_rows(Var x, const Mask& valid);         // rows with valid==0 set to +0

// Row-wise layer normalisation with affine gamma/beta (each 1×n).
Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);

// Mean binary cross-entropy of probabilities p (1×C) against binary targets,
// with p clamped to [clamp, 1 - clamp]. Clamped entries pass no gradient.
Var binary_cross_entropy(Var p, std::span<const double> target, double clamp = 1e-7);

}  // namespace clasp
