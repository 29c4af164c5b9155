#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "clasp/autodiff.hpp"
#include "clasp/errors.hpp"
#include "clasp/gradcheck.hpp"
#include "test_util.hpp"

using namespace clasp;
using clasp::testing::random_tensor;

namespace {

// Weighted sum with fixed random weights, so every output entry matters.
Var weighted_sum(Tape& tape, Var x, std::uint64_t seed = 99) {
  std::mt19937_64 rng(seed);
  Var w = tape.constant(random_tensor(rng, x.rows(), x.cols()));
  return sum(mul(x, w));
}

}  // namespace

TEST(Tensor, ShapeAndSize) {
  Tensor t({2, 3}, 1.5);
  EXPECT_EQ(t.rows(), 2u);
  EXPECT_EQ(t.cols(), 3u);
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(t(1, 2), 1.5);
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
  EXPECT_TRUE(t.all_finite());
  t(0, 0) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_FALSE(t.all_finite());
}

TEST(Matmul, IdentityLeavesMatrix) {
  Tape tape;
  Var id = tape.constant(Tensor::matrix({{1, 0}, {0, 1}}));
  Var m = tape.constant(Tensor::matrix({{1, 2}, {3, 4}}));
  EXPECT_EQ(matmul(id, m).value(), Tensor::matrix({{1, 2}, {3, 4}}));
}

TEST(Matmul, RowSums) {
  Tape tape;
  Var m = tape.constant(Tensor::matrix({{1, 2}, {3, 4}}));
  Var ones = tape.constant(Tensor::matrix({{1}, {1}}));
  EXPECT_EQ(matmul(m, ones).value(), Tensor::matrix({{3}, {7}}));
}

TEST(Matmul, MismatchNamesBothShapes) {
  Tape tape;
  Var a = tape.constant(Tensor({5, 4}));
  Var b = tape.constant(Tensor({3, 3}));
  try {
    matmul(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[5x4]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[3x3]"), std::string::npos) << msg;
  }
}

TEST(Matmul, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(1);
  const Tensor a = random_tensor(rng, 5, 4), b = random_tensor(rng, 4, 3);
  auto wrt_a = gradient_check([&b](Tape& t, Var x) { return weighted_sum(t, matmul(x, t.constant(b))); }, a);
  auto wrt_b = gradient_check([&a](Tape& t, Var x) { return weighted_sum(t, matmul(t.constant(a), x)); }, b);
  EXPECT_LT(wrt_a.max_rel_error, 1e-6);
  EXPECT_LT(wrt_b.max_rel_error, 1e-6);
  EXPECT_EQ(wrt_a.checked, 20u);
  EXPECT_EQ(wrt_b.checked, 12u);
}

TEST(Softmax, UniformRow) {
  Tape tape;
  Var y = softmax_rows(tape.constant(Tensor::matrix({{0, 0, 0}})));
  for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(y.value()(0, j), 1.0 / 3.0, 1e-15);
}

TEST(Softmax, ShiftInvariantAnalytic) {
  Tape tape;
  const double c = 123.25;
  Var y = softmax_rows(tape.constant(Tensor::matrix({{c, c + std::log(2.0)}})));
  EXPECT_NEAR(y.value()(0, 0), 1.0 / 3.0, 1e-12);
  EXPECT_NEAR(y.value()(0, 1), 2.0 / 3.0, 1e-12);
}

TEST(Softmax, RowsSumToOneAndStableForLargeInputs) {
  std::mt19937_64 rng(2);
  Tape tape;
  Tensor x = random_tensor(rng, 6, 9, -800.0, 800.0);
  Var y = softmax_rows(tape.constant(x));
  for (std::size_t r = 0; r < 6; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < 9; ++c) {
      EXPECT_GE(y.value()(r, c), 0.0);
      s += y.value()(r, c);
    }
    EXPECT_NEAR(s, 1.0, 1e-9);
  }
}

TEST(Softmax, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(3);
  auto r = gradient_check([](Tape& t, Var x) { return weighted_sum(t, softmax_rows(x)); }, random_tensor(rng, 3, 7));
  EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(MaskedSoftmax, MaskedColumnsGetExactZero) {
  Tape tape;
  Var y = masked_softmax_rows(tape.constant(Tensor::matrix({{1, 2, 3}, {0, 0, 0}})), Mask{1, 0, 1});
  EXPECT_EQ(y.value()(0, 1), 0.0);
  EXPECT_EQ(y.value()(1, 1), 0.0);
  EXPECT_NEAR(y.value()(1, 0), 0.5, 1e-15);
  EXPECT_NEAR(y.value()(0, 0) + y.value()(0, 2), 1.0, 1e-12);
}

TEST(MaskedSoftmax, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(4);
  const Mask keys{1, 1, 0, 1, 0};
  auto r = gradient_check([&keys](Tape& t, Var x) { return weighted_sum(t, masked_softmax_rows(x, keys)); },
                          random_tensor(rng, 4, 5));
  EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(Sigmoid, ZeroIsHalf) {
  Tape tape;
  EXPECT_EQ(sigmoid(tape.constant(Tensor::scalar(0.0))).value().item(), 0.5);
}

TEST(Sigmoid, SymmetricAndBounded) {
  std::mt19937_64 rng(5);
  Tape tape;
  Tensor x = random_tensor(rng, 4, 4, -40.0, 40.0);
  Tensor neg = x;
  for (double& v : neg.data()) v = -v;
  Var a = sigmoid(tape.constant(x)), b = sigmoid(tape.constant(neg));
  for (std::size_t i = 0; i < x.size(); ++i) {
    EXPECT_NEAR(a.value()[i] + b.value()[i], 1.0, 1e-15);
    EXPECT_GE(a.value()[i], 0.0);
    EXPECT_LE(a.value()[i], 1.0);
  }
  Var extreme = sigmoid(tape.constant(Tensor::matrix({{-1000.0, 1000.0}})));
  EXPECT_TRUE(extreme.value().all_finite());
}

TEST(Sigmoid, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(6);
  auto r = gradient_check([](Tape& t, Var x) { return weighted_sum(t, sigmoid(x)); }, random_tensor(rng, 4, 3, -3, 3));
  EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(GatherRows, SelectsAndScatterAddsGradient) {
  Tape tape;
  Var x = tape.leaf(Tensor::matrix({{1, 2}, {3, 4}, {5, 6}}));
  const std::vector<std::size_t> idx{2, 0, 2};
  Var g = gather_rows(x, idx);
  EXPECT_EQ(g.value(), Tensor::matrix({{5, 6}, {1, 2}, {5, 6}}));
  tape.backward(sum(g));
  EXPECT_EQ(x.grad(), Tensor::matrix({{1, 1}, {0, 0}, {2, 2}}));
}

TEST(GatherRows, OutOfRangeThrows) {
  Tape tape;
  Var x = tape.constant(Tensor({3, 2}));
  const std::vector<std::size_t> idx{3};
  EXPECT_THROW(gather_rows(x, idx), IndexError);
}

TEST(GatherRows, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(7);
  const std::vector<std::size_t> idx{4, 1, 1, 0};
  auto r = gradient_check([&idx](Tape& t, Var x) { return weighted_sum(t, gather_rows(x, idx)); },
                          random_tensor(rng, 5, 3));
  EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(Primitives, ElementwiseGradients) {
  std::mt19937_64 rng(8);
  const Tensor other = random_tensor(rng, 3, 4);
  const Tensor bias = random_tensor(rng, 1, 4);
  const Tensor col = random_tensor(rng, 3, 1);
  const Tensor x = random_tensor(rng, 3, 4);
  const std::vector<std::pair<const char*, ScalarFn>> cases = {
      {"add", [&](Tape& t, Var v) { return weighted_sum(t, add(v, t.constant(other))); }},
      {"mul", [&](Tape& t, Var v) { return weighted_sum(t, mul(v, t.constant(other))); }},
      {"add_row", [&](Tape& t, Var v) { return weighted_sum(t, add_row(v, t.constant(bias))); }},
      {"mul_col", [&](Tape& t, Var v) { return weighted_sum(t, mul_col(v, t.constant(col))); }},
      {"scale", [&](Tape& t, Var v) { return weighted_sum(t, scale(v, -2.5)); }},
      {"transpose", [&](Tape& t, Var v) { return weighted_sum(t, transpose(v)); }},
      {"leaky_relu", [&](Tape& t, Var v) { return weighted_sum(t, leaky_relu(v, 0.01)); }},
      {"relu", [&](Tape& t, Var v) { return weighted_sum(t, relu(v)); }},
      {"mean", [&](Tape& t, Var v) { return mean(mul(v, v)); }},
      {"concat", [&](Tape& t, Var v) { return weighted_sum(t, concat_cols({v, t.constant(other), v})); }},
      {"slice", [&](Tape& t, Var v) { return weighted_sum(t, slice_cols(v, 1, 2)); }},
      {"masked_mean", [&](Tape& t, Var v) { return weighted_sum(t, masked_mean_rows(v, Mask{1, 0, 1})); }},
      {"masked_max", [&](Tape& t, Var v) { return weighted_sum(t, masked_max_rows(v, Mask{1, 1, 0})); }},
      {"mask_rows", [&](Tape& t, Var v) { return weighted_sum(t, mask_rows(v, Mask{0, 1, 1})); }},
      {"layer_norm",
       [&](Tape& t, Var v) {
         return weighted_sum(t, layer_norm(v, t.constant(Tensor({1, 4}, 1.3)), t.constant(Tensor({1, 4}, 0.2))));
       }},
  };
  for (const auto& [name, fn] : cases) {
    auto r = gradient_check(fn, x);
    EXPECT_LT(r.max_rel_error, 1e-6) << name << " worst index " << r.worst_index;
    EXPECT_GT(r.checked, 0u) << name;
  }
}

TEST(Primitives, LayerNormAffineGradients) {
  std::mt19937_64 rng(9);
  const Tensor x = random_tensor(rng, 3, 5);
  auto gamma = gradient_check(
      [&](Tape& t, Var g) { return weighted_sum(t, layer_norm(t.constant(x), g, t.constant(Tensor({1, 5})))); },
      random_tensor(rng, 1, 5));
  EXPECT_LT(gamma.max_rel_error, 1e-6);
}

TEST(Conv1d, MatchesDirectLoop) {
  std::mt19937_64 rng(10);
  const std::size_t steps = 6, in = 2, out = 3, kernel = 3;
  const Tensor x = random_tensor(rng, steps, in), w = random_tensor(rng, kernel * in, out);
  Tape tape;
  Var y = conv1d(tape.constant(x), tape.constant(w), kernel);
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t o = 0; o < out; ++o) {
      double acc = 0.0;
      for (std::size_t k = 0; k < kernel; ++k) {
        const long src = static_cast<long>(t + k) - 1;
        if (src < 0 || src >= static_cast<long>(steps)) continue;
        for (std::size_t i = 0; i < in; ++i) acc += x(static_cast<std::size_t>(src), i) * w(k * in + i, o);
      }
      EXPECT_NEAR(y.value()(t, o), acc, 1e-12);
    }
  }
}

TEST(Conv1d, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(11);
  const Tensor x = random_tensor(rng, 5, 2), w = random_tensor(rng, 6, 3);
  auto wrt_x = gradient_check([&](Tape& t, Var v) { return weighted_sum(t, conv1d(v, t.constant(w), 3)); }, x);
  auto wrt_w = gradient_check([&](Tape& t, Var v) { return weighted_sum(t, conv1d(t.constant(x), v, 3)); }, w);
  EXPECT_LT(wrt_x.max_rel_error, 1e-6);
  EXPECT_LT(wrt_w.max_rel_error, 1e-6);
}

TEST(BinaryCrossEntropy, HalfGivesLn2) {
  Tape tape;
  const std::vector<double> y{1, 0, 1};
  Var l = binary_cross_entropy(tape.constant(Tensor({1, 3}, 0.5)), y);
  EXPECT_NEAR(l.value().item(), std::log(2.0), 1e-15);
}

TEST(BinaryCrossEntropy, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(12);
  const std::vector<double> y{1, 0, 0, 1};
  auto r = gradient_check([&y](Tape&, Var p) { return binary_cross_entropy(p, y); }, random_tensor(rng, 1, 4, 0.05, 0.95));
  EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(Tape, BackwardIsRepeatable) {
  std::mt19937_64 rng(13);
  Tape tape;
  Var x = tape.leaf(random_tensor(rng, 4, 4));
  Var loss = weighted_sum(tape, softmax_rows(matmul(x, transpose(x))));
  tape.backward(loss);
  const Tensor first = x.grad();
  tape.backward(loss);
  EXPECT_EQ(first, x.grad());
}

TEST(Tape, GradientsAccumulateOverReuse) {
  Tape tape;
  Var x = tape.leaf(Tensor::matrix({{2.0}}));
  Var y = mul(x, x);  // x²
  tape.backward(add(y, x));
  EXPECT_DOUBLE_EQ(x.grad().item(), 5.0);
}

TEST(Tape, ConstantsReceiveNoGradient) {
  Tape tape;
  Var c = tape.constant(Tensor::matrix({{1.0}}));
  Var x = tape.leaf(Tensor::matrix({{3.0}}));
  tape.backward(mul(c, x));
  EXPECT_FALSE(c.requires_grad());
  EXPECT_DOUBLE_EQ(x.grad().item(), 1.0);
}

TEST(Tape, NonFiniteForwardValueThrows) {
  Tape tape;
  Var x = tape.constant(Tensor::matrix({{1e308}}));
  EXPECT_THROW(scale(x, 10.0), NumericError);
}

TEST(Tape, NonScalarLossRejected) {
  Tape tape;
  Var x = tape.leaf(Tensor({2, 2}, 1.0));
  EXPECT_THROW(tape.backward(x), ContractError);
}

TEST(GradCheck, ReportsKinksInsteadOfFailing) {
  // |x| at exactly 0 has no derivative; the probe must be skipped.
  const Tensor x = Tensor::matrix({{0.0, 0.7}});
  auto r = gradient_check([](Tape& t, Var v) { return sum(add(relu(v), relu(scale(v, -1.0)))); }, x);
  EXPECT_EQ(r.skipped, std::vector<std::size_t>{0});
  EXPECT_EQ(r.checked, 1u);
  EXPECT_LT(r.max_rel_error, 1e-8);
}

TEST(GradCheck, DetectsWrongGradient) {
  const Tensor x = Tensor::matrix({{0.3, -0.4}});
  Tensor wrong({1, 2}, 5.0);
  auto r = compare_gradient([](const Tensor& v) { return v[0] * v[0] + v[1]; }, x, wrong);
  EXPECT_GT(r.max_rel_error, 0.5);
}
