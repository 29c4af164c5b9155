#include "clasp/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "clasp/errors.hpp"

namespace clasp {

namespace {

// C (m×p) += A (m×n) · B (n×p)
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t n, std::size_t p) {
  for (std::size_t i = 0; i < m; ++i) {
    double* c_row = c + i * p;
    for (std::size_t k = 0; k < n; ++k) {
      const double a_ik = a[i * n + k];
      const double* b_row = b + k * p;
      for (std::size_t j = 0; j < p; ++j) c_row[j] += a_ik * b_row[j];
    }
  }
}

// C (m×p) += A (m×n) · Bᵀ, B stored p×n. Transposes B first so the inner loop vectorizes.
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t n, std::size_t p) {
  thread_local std::vector<double> bt;
  bt.resize(n * p);
  for (std::size_t j = 0; j < p; ++j)
    for (std::size_t k = 0; k < n; ++k) bt[k * p + j] = b[j * n + k];
  gemm_nn(a, bt.data(), c, m, n, p);
}

// C (m×p) += Aᵀ · B, A stored n×m, B stored n×p
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t n, std::size_t p) {
  for (std::size_t k = 0; k < n; ++k) {
    const double* a_row = a + k * m;
    const double* b_row = b + k * p;
    for (std::size_t i = 0; i < m; ++i) {
      const double a_ki = a_row[i];
      double* c_row = c + i * p;
      for (std::size_t j = 0; j < p; ++j) c_row[j] += a_ki * b_row[j];
    }
  }
}

void require_rank2(const Var& v, std::string_view op) {
  if (v.value().rank() != 2) {
    throw ShapeError(std::string(op) + ": expected rank-2 operand, got " + shape_str(v.shape()));
  }
}

void require_same_tape(const Var& a, const Var& b, std::string_view op) {
  if (&a.tape() != &b.tape()) throw ContractError(std::string(op) + ": operands live on different tapes");
}

void require_same_shape(const Var& a, const Var& b, std::string_view op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

void require_mask(const Mask& mask, std::size_t rows, std::string_view op) {
  if (mask.size() != rows) {
    throw ShapeError(std::string(op) + ": mask length " + std::to_string(mask.size()) + " for " +
                     std::to_string(rows) + " rows");
  }
}

// Elementwise unary primitive whose derivative is a function of (x, y).
template <typename Fwd, typename Deriv>
Var unary(std::string_view op, Var x, Fwd fwd, Deriv deriv) {
  const Tensor& in = x.value();
  Tensor out(in.shape());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = fwd(in[i]);
  return x.tape().record(op, std::move(out), {x}, [x, deriv](Tape& t, std::size_t self) {
    if (!x.requires_grad()) return;
    const Tensor& g = t.grad(self);
    const Tensor& y = t.value(self);
    const Tensor& xin = x.value();
    Tensor& gx = t.grad_buffer(x.id());
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * deriv(xin[i], y[i]);
  });
}

}  // namespace

// ---------------------------------------------------------------------------
// Var / Tape

const Tensor& Var::value() const { return tape_->value(id_); }
const Tensor& Var::grad() const { return tape_->grad(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::leaf(Tensor value, bool requires_grad) {
  if (!value.all_finite()) throw NumericError("leaf tensor holds a non-finite value");
  Node node;
  node.op = requires_grad ? "parameter" : "constant";
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(std::string_view op, Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
  return record(op, std::move(value), std::vector<Var>(inputs), std::move(backward));
}

Var Tape::record(std::string_view op, Tensor value, const std::vector<Var>& inputs, BackwardFn backward) {
  if (!value.all_finite()) throw NumericError(std::string(op) + " produced a non-finite value");
  Node node;
  node.op = op;
  node.value = std::move(value);
  node.inputs.reserve(inputs.size());
  for (const Var& in : inputs) {
    if (&in.tape() != this) throw ContractError(std::string(op) + ": input recorded on another tape");
    node.inputs.push_back(in.id());
    node.requires_grad = node.requires_grad || in.requires_grad();
  }
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

const Tensor& Tape::grad(std::size_t id) const {
  const Node& node = nodes_[id];
  if (!node.requires_grad) throw ContractError("grad requested for a node that does not require grad");
  return node.grad;
}

Tensor& Tape::grad_buffer(std::size_t id) {
  Node& node = nodes_[id];
  node.reached = true;
  return node.grad;
}

void Tape::backward(Var loss) {
  if (&loss.tape() != this) throw ContractError("backward: loss recorded on another tape");
  if (loss.value().size() != 1) {
    throw ContractError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  }
  for (Node& node : nodes_) {
    if (!node.requires_grad) continue;
    if (node.grad.shape() != node.value.shape()) {
      node.grad = Tensor(node.value.shape());
    } else {
      node.grad.fill(0.0);
    }
    node.reached = false;
  }
  if (!nodes_[loss.id()].requires_grad) return;
  nodes_[loss.id()].grad.fill(1.0);
  nodes_[loss.id()].reached = true;
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (!node.requires_grad || !node.reached || !node.backward) continue;
    node.backward(*this, id);
  }
}

// ---------------------------------------------------------------------------
// Linear algebra

Var matmul(Var lhs, Var rhs) {
  require_rank2(lhs, "matmul");
  require_rank2(rhs, "matmul");
  require_same_tape(lhs, rhs, "matmul");
  const std::size_t m = lhs.rows(), n = lhs.cols(), p = rhs.cols();
  if (rhs.rows() != n) {
    throw ShapeError("matmul: inner dimensions disagree, lhs " + shape_str(lhs.shape()) + " rhs " +
                     shape_str(rhs.shape()));
  }
  Tensor out({m, p});
  gemm_nn(lhs.value().data().data(), rhs.value().data().data(), out.data().data(), m, n, p);
  return lhs.tape().record("matmul", std::move(out), {lhs, rhs}, [lhs, rhs, m, n, p](Tape& t, std::size_t self) {
    const double* g = t.grad(self).data().data();
    if (lhs.requires_grad()) {
      gemm_nt(g, rhs.value().data().data(), t.grad_buffer(lhs.id()).data().data(), m, p, n);
    }
    if (rhs.requires_grad()) {
      gemm_tn(lhs.value().data().data(), g, t.grad_buffer(rhs.id()).data().data(), n, m, p);
    }
  });
}

Var transpose(Var x) {
  require_rank2(x, "transpose");
  const std::size_t m = x.rows(), n = x.cols();
  const Tensor& in = x.value();
  Tensor out({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out(j, i) = in(i, j);
  return x.tape().record("transpose", std::move(out), {x}, [x, m, n](Tape& t, std::size_t self) {
    if (!x.requires_grad()) return;
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad_buffer(x.id());
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) gx(i, j) += g(j, i);
  });
}

Var add(Var a, Var b) {
  require_same_tape(a, b, "add");
  require_same_shape(a, b, "add");
  Tensor out = a.value();
  accumulate(out, b.value());
  return a.tape().record("add", std::move(out), {a, b}, [a, b](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (a.requires_grad()) accumulate(t.grad_buffer(a.id()), g);
    if (b.requires_grad()) accumulate(t.grad_buffer(b.id()), g);
  });
}

Var add_row(Var x, Var bias) {
  require_rank2(x, "add_row");
  require_same_tape(x, bias, "add_row");
  const std::size_t m = x.rows(), n = x.cols();
  if (bias.value().size() != n) {
    throw ShapeError("add_row: bias " + shape_str(bias.shape()) + " for input " + shape_str(x.shape()));
  }
  Tensor out = x.value();
  const Tensor& b = bias.value();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out(i, j) += b[j];
  return x.tape().record("add_row", std::move(out), {x, bias}, [x, bias, m, n](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (x.requires_grad()) accumulate(t.grad_buffer(x.id()), g);
    if (bias.requires_grad()) {
      Tensor& gb = t.grad_buffer(bias.id());
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gb[j] += g(i, j);
    }
  });
}

Var mul(Var a, Var b) {
  require_same_tape(a, b, "mul");
  require_same_shape(a, b, "mul");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return a.tape().record("mul", std::move(out), {a, b}, [a, b](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (a.requires_grad()) {
      Tensor& ga = t.grad_buffer(a.id());
      const Tensor& bv = b.value();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (b.requires_grad()) {
      Tensor& gb = t.grad_buffer(b.id());
      const Tensor& av = a.value();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

Var mul_col(Var x, Var w) {
  require_rank2(x, "mul_col");
  require_same_tape(x, w, "mul_col");
  const std::size_t m = x.rows(), n = x.cols();
  if (w.value().size() != m) {
    throw ShapeError("mul_col: weight " + shape_str(w.shape()) + " for input " + shape_str(x.shape()));
  }
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out(i, j) = xv(i, j) * wv[i];
  return x.tape().record("mul_col", std::move(out), {x, w}, [x, w, m, n](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (x.requires_grad()) {
      Tensor& gx = t.grad_buffer(x.id());
      const Tensor& wv = w.value();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gx(i, j) += g(i, j) * wv[i];
    }
    if (w.requires_grad()) {
      Tensor& gw = t.grad_buffer(w.id());
      const Tensor& xv = x.value();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gw[i] += g(i, j) * xv(i, j);
    }
  });
}

Var scale(Var x, double factor) {
  const Tensor& in = x.value();
  Tensor out(in.shape());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] * factor;
  return x.tape().record("scale", std::move(out), {x}, [x, factor](Tape& t, std::size_t self) {
    if (!x.requires_grad()) return;
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad_buffer(x.id());
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * factor;
  });
}

// ---------------------------------------------------------------------------
// Activations

Var sigmoid(Var x) {
  return unary(
      "sigmoid", x,
      [](double v) {
        // Split on sign so exp never overflows.
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var relu(Var x) {
  return unary(
      "relu", x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Var leaky_relu(Var x, double slope) {
  return unary(
      "leaky_relu", x, [slope](double v) { return v > 0.0 ? v : slope * v; },
      [slope](double v, double) { return v > 0.0 ? 1.0 : slope; });
}

namespace {

Var softmax_impl(std::string_view op, Var x, const Mask* key_valid) {
  require_rank2(x, op);
  const std::size_t m = x.rows(), n = x.cols();
  if (key_valid) require_mask(*key_valid, n, op);
  const Tensor& in = x.value();
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    double row_max = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j)
      if (!key_valid || (*key_valid)[j]) row_max = std::max(row_max, in(i, j));
    if (!std::isfinite(row_max)) throw ContractError(std::string(op) + ": row without a valid key");
    double denom = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (key_valid && !(*key_valid)[j]) continue;
      out(i, j) = std::exp(in(i, j) - row_max);
      denom += out(i, j);
    }
    for (std::size_t j = 0; j < n; ++j) out(i, j) /= denom;
  }
  return x.tape().record(op, std::move(out), {x}, [x, m, n](Tape& t, std::size_t self) {
    if (!x.requires_grad()) return;
    const Tensor& g = t.grad(self);
    const Tensor& y = t.value(self);
    Tensor& gx = t.grad_buffer(x.id());
    for (std::size_t i = 0; i < m; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += y(i, j) * g(i, j);
      for (std::size_t j = 0; j < n; ++j) gx(i, j) += y(i, j) * (g(i, j) - dot);
    }
  });
}

}  // namespace

Var softmax_rows(Var x) { return softmax_impl("softmax_rows", x, nullptr); }

Var masked_softmax_rows(Var x, const Mask& key_valid) {
  return softmax_impl("masked_softmax_rows", x, &key_valid);
}

// ---------------------------------------------------------------------------
// Structure

Var conv1d(Var x, Var weight, std::size_t kernel) {
  require_rank2(x, "conv1d");
  require_rank2(weight, "conv1d");
  require_same_tape(x, weight, "conv1d");
  if (kernel == 0) throw ContractError("conv1d: kernel size must be positive");
  const std::size_t steps = x.rows(), in_ch = x.cols(), out_ch = weight.cols();
  if (weight.rows() != kernel * in_ch) {
    throw ShapeError("conv1d: weight " + shape_str(weight.shape()) + " does not fit kernel " +
                     std::to_string(kernel) + " over input " + shape_str(x.shape()));
  }
  const std::size_t width = kernel * in_ch;
  const std::ptrdiff_t pad_left = static_cast<std::ptrdiff_t>((kernel - 1) / 2);
  // im2col: row t holds the receptive field of output step t.
  Tensor cols({steps, width});
  const Tensor& xv = x.value();
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t tap = 0; tap < kernel; ++tap) {
      const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + tap) - pad_left;
      if (src < 0 || src >= static_cast<std::ptrdiff_t>(steps)) continue;
      for (std::size_t c = 0; c < in_ch; ++c) cols(t, tap * in_ch + c) = xv(static_cast<std::size_t>(src), c);
    }
  }
  Tensor out({steps, out_ch});
  gemm_nn(cols.data().data(), weight.value().data().data(), out.data().data(), steps, width, out_ch);
  return x.tape().record(
      "conv1d", std::move(out), {x, weight},
      [x, weight, cols = std::move(cols), kernel, steps, in_ch, out_ch, width, pad_left](Tape& t, std::size_t self) {
        const double* g = t.grad(self).data().data();
        if (weight.requires_grad()) {
          gemm_tn(cols.data().data(), g, t.grad_buffer(weight.id()).data().data(), width, steps, out_ch);
        }
        if (x.requires_grad()) {
          Tensor dcols({steps, width});
          gemm_nt(g, weight.value().data().data(), dcols.data().data(), steps, out_ch, width);
          Tensor& gx = t.grad_buffer(x.id());
          for (std::size_t s = 0; s < steps; ++s) {
            for (std::size_t tap = 0; tap < kernel; ++tap) {
              const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(s + tap) - pad_left;
              if (src < 0 || src >= static_cast<std::ptrdiff_t>(steps)) continue;
              for (std::size_t c = 0; c < in_ch; ++c) gx(static_cast<std::size_t>(src), c) += dcols(s, tap * in_ch + c);
            }
          }
        }
      });
}

Var gather_rows(Var x, std::span<const std::size_t> idx) {
  require_rank2(x, "gather_rows");
  const std::size_t rows = x.rows(), n = x.cols();
  std::vector<std::size_t> indices(idx.begin(), idx.end());
  Tensor out({indices.size(), n});
  const Tensor& xv = x.value();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= rows) {
      throw IndexError("gather_rows: index " + std::to_string(indices[i]) + " out of range for " +
                       std::to_string(rows) + " rows");
    }
    std::copy_n(xv.row_span(indices[i]).begin(), n, out.row_span(i).begin());
  }
  return x.tape().record("gather_rows", std::move(out), {x}, [x, indices = std::move(indices), n](Tape& t, std::size_t self) {
    if (!x.requires_grad()) return;
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad_buffer(x.id());
    for (std::size_t i = 0; i < indices.size(); ++i)
      for (std::size_t j = 0; j < n; ++j) gx(indices[i], j) += g(i, j);
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ContractError("concat_cols: no operands");
  const std::size_t m = parts.front().rows();
  std::size_t total = 0;
  for (const Var& p : parts) {
    require_rank2(p, "concat_cols");
    require_same_tape(parts.front(), p, "concat_cols");
    if (p.rows() != m) throw ShapeError("concat_cols: row count mismatch " + shape_str(p.shape()));
    total += p.cols();
  }
  Tensor out({m, total});
  std::size_t offset = 0;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < v.cols(); ++j) out(i, offset + j) = v(i, j);
    offset += v.cols();
  }
  return parts.front().tape().record("concat_cols", std::move(out), parts, [parts, m](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    std::size_t offset = 0;
    for (const Var& p : parts) {
      const std::size_t n = p.cols();
      if (p.requires_grad()) {
        Tensor& gp = t.grad_buffer(p.id());
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) gp(i, j) += g(i, offset + j);
      }
      offset += n;
    }
  });
}

Var slice_cols(Var x, std::size_t start, std::size_t count) {
  require_rank2(x, "slice_cols");
  const std::size_t m = x.rows();
  if (start + count > x.cols()) {
    throw IndexError("slice_cols: [" + std::to_string(start) + ", " + std::to_string(start + count) +
                     ") out of range for " + shape_str(x.shape()));
  }
  const Tensor& v = x.value();
  Tensor out({m, count});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < count; ++j) out(i, j) = v(i, start + j);
  return x.tape().record("slice_cols", std::move(out), {x}, [x, m, start, count](Tape& t, std::size_t self) {
    if (!x.requires_grad()) return;
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad_buffer(x.id());
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < count; ++j) gx(i, start + j) += g(i, j);
  });
}

// ---------------------------------------------------------------------------
// Reductions

Var sum(Var x) {
  double total = 0.0;
  for (double v : x.value().data()) total += v;
  return x.tape().record("sum", Tensor::scalar(total), {x}, [x](Tape& t, std::size_t self) {
    if (!x.requires_grad()) return;
    const double g = t.grad(self).item();
    for (double& v : t.grad_buffer(x.id()).data()) v += g;
  });
}

Var mean(Var x) {
  const std::size_t n = x.value().size();
  if (n == 0) throw ContractError("mean of an empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(n));
}

Var masked_mean_rows(Var x, const Mask& valid) {
  require_rank2(x, "masked_mean_rows");
  const std::size_t m = x.rows(), n = x.cols();
  require_mask(valid, m, "masked_mean_rows");
  const auto count = static_cast<std::size_t>(std::count_if(valid.begin(), valid.end(), [](auto v) { return v != 0; }));
  if (count == 0) throw ContractError("masked_mean_rows: no valid rows");
  const double inv = 1.0 / static_cast<double>(count);
  const Tensor& v = x.value();
  Tensor out({1, n});
  for (std::size_t i = 0; i < m; ++i) {
    if (!valid[i]) continue;
    for (std::size_t j = 0; j < n; ++j) out[j] += v(i, j);
  }
  for (std::size_t j = 0; j < n; ++j) out[j] /= static_cast<double>(count);
  return x.tape().record("masked_mean_rows", std::move(out), {x}, [x, valid, m, n, inv](Tape& t, std::size_t self) {
    if (!x.requires_grad()) return;
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad_buffer(x.id());
    for (std::size_t i = 0; i < m; ++i) {
      if (!valid[i]) continue;
      for (std::size_t j = 0; j < n; ++j) gx(i, j) += g[j] * inv;
    }
  });
}

Var masked_max_rows(Var x, const Mask& valid) {
  require_rank2(x, "masked_max_rows");
  const std::size_t m = x.rows(), n = x.cols();
  require_mask(valid, m, "masked_max_rows");
  const Tensor& v = x.value();
  std::vector<std::size_t> argmax(n, m);
  Tensor out({1, n});
  for (std::size_t i = 0; i < m; ++i) {
    if (!valid[i]) continue;
    for (std::size_t j = 0; j < n; ++j) {
      if (argmax[j] == m || v(i, j) > out[j]) {
        argmax[j] = i;
        out[j] = v(i, j);
      }
    }
  }
  if (n > 0 && argmax[0] == m) throw ContractError("masked_max_rows: no valid rows");
  return x.tape().record("masked_max_rows", std::move(out), {x}, [x, argmax = std::move(argmax), n](Tape& t, std::size_t self) {
    if (!x.requires_grad()) return;
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad_buffer(x.id());
    for (std::size_t j = 0; j < n; ++j) gx(argmax[j], j) += g[j];
  });
}

Var mask_rows(Var x, const Mask& valid) {
  require_rank2(x, "mask_rows");
  const std::size_t m = x.rows(), n = x.cols();
  require_mask(valid, m, "mask_rows");
  Tensor out = x.value();
  for (std::size_t i = 0; i < m; ++i)
    if (!valid[i]) std::fill_n(out.row_span(i).begin(), n, 0.0);
  return x.tape().record("mask_rows", std::move(out), {x}, [x, valid, m, n](Tape& t, std::size_t self) {
    if (!x.requires_grad()) return;
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad_buffer(x.id());
    for (std::size_t i = 0; i < m; ++i) {
      if (!valid[i]) continue;
      for (std::size_t j = 0; j < n; ++j) gx(i, j) += g(i, j);
    }
  });
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  require_rank2(x, "layer_norm");
  const std::size_t m = x.rows(), n = x.cols();
  if (gamma.value().size() != n || beta.value().size() != n) {
    throw ShapeError("layer_norm: affine parameters " + shape_str(gamma.shape()) + "/" + shape_str(beta.shape()) +
                     " for input " + shape_str(x.shape()));
  }
  const Tensor& v = x.value();
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  Tensor normalized({m, n});
  std::vector<double> rstd(m);
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += v(i, j);
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (v(i, j) - mu) * (v(i, j) - mu);
    var /= static_cast<double>(n);
    rstd[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      normalized(i, j) = (v(i, j) - mu) * rstd[i];
      out(i, j) = normalized(i, j) * gv[j] + bv[j];
    }
  }
  return x.tape().record(
      "layer_norm", std::move(out), {x, gamma, beta},
      [x, gamma, beta, normalized = std::move(normalized), rstd = std::move(rstd), m, n](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        if (gamma.requires_grad()) {
          Tensor& gg = t.grad_buffer(gamma.id());
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) gg[j] += g(i, j) * normalized(i, j);
        }
        if (beta.requires_grad()) {
          Tensor& gb = t.grad_buffer(beta.id());
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) gb[j] += g(i, j);
        }
        if (x.requires_grad()) {
          const Tensor& gv = gamma.value();
          Tensor& gx = t.grad_buffer(x.id());
          const double inv_n = 1.0 / static_cast<double>(n);
          for (std::size_t i = 0; i < m; ++i) {
            double mean_d = 0.0, mean_dx = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
              const double d = g(i, j) * gv[j];
              mean_d += d;
              mean_dx += d * normalized(i, j);
            }
            mean_d *= inv_n;
            mean_dx *= inv_n;
            for (std::size_t j = 0; j < n; ++j) {
              const double d = g(i, j) * gv[j];
              gx(i, j) += rstd[i] * (d - mean_d - normalized(i, j) * mean_dx);
            }
          }
        }
      });
}

Var binary_cross_entropy(Var p, std::span<const double> target, double clamp) {
  const Tensor& pv = p.value();
  if (pv.size() != target.size()) {
    throw ShapeError("binary_cross_entropy: " + std::to_string(target.size()) + " targets for prediction " +
                     shape_str(p.shape()));
  }
  const std::size_t n = pv.size();
  if (n == 0) throw ContractError("binary_cross_entropy: empty prediction");
  const double lo = clamp, hi = 1.0 - clamp;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double q = std::clamp(pv[i], lo, hi);
    total -= target[i] * std::log(q) + (1.0 - target[i]) * std::log(1.0 - q);
  }
  std::vector<double> y(target.begin(), target.end());
  return p.tape().record("binary_cross_entropy", Tensor::scalar(total / static_cast<double>(n)), {p},
                         [p, y = std::move(y), lo, hi](Tape& t, std::size_t self) {
                           if (!p.requires_grad()) return;
                           const double g = t.grad(self).item() / static_cast<double>(y.size());
                           const Tensor& pv = p.value();
                           Tensor& gp = t.grad_buffer(p.id());
                           for (std::size_t i = 0; i < y.size(); ++i) {
                             const double q = pv[i];
                             if (q < lo || q > hi) continue;
                             gp[i] -= g * (y[i] / q - (1.0 - y[i]) / (1.0 - q));
                           }
                         });
}

}  // namespace clasp
