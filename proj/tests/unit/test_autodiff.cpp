#include <cmath>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "fastadv/core/tape.hpp"
#include "fastadv/nn/model.hpp"
#include "support/gradcheck_cases.hpp"
#include "support/oracles.hpp"

using namespace fastadv;


// ---------------------------------------------------------------------------
// Forward values

TEST(Tape, MatmulHandArithmetic) {
  Tape<double> t;
  const Var a = t.leaf(Tensor<double>({2, 2}, {1, 2, 3, 4}));
  const Var b = t.leaf(Tensor<double>({2, 1}, {1, 1}));
  EXPECT_EQ(t.value(t.matmul(a, b)).values(), (std::vector<double>{3, 7}));
}

TEST(Tape, ReluDefinition) {
  Tape<double> t;
  const Var x = t.leaf(Tensor<double>({3}, {-1, 0, 2}));
  EXPECT_EQ(t.value(t.relu(x)).values(), (std::vector<double>{0, 0, 2}));
}

TEST(Tape, ConvAllOnesKernelGivesWindowSums) {
  Tape<double> t;
  const Var x = t.leaf(Tensor<double>({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9}));
  const Var k = t.leaf(Tensor<double>::full({1, 1, 2, 2}, 1.0));
  const auto& y = t.value(t.conv2d(x, k, {1, 0}));
  EXPECT_EQ(y.shape(), (Shape{1, 1, 2, 2}));
  EXPECT_EQ(y.values(), (std::vector<double>{12, 16, 24, 28}));
}

TEST(Tape, ConvMatchesNestedLoopReference) {
  struct Case {
    Shape x, w;
    std::size_t stride, pad;
  };
  const std::vector<Case> cases{{{2, 3, 7, 6}, {4, 3, 3, 3}, 1, 0},
                                {{1, 1, 28, 28}, {16, 1, 4, 4}, 2, 1},
                                {{3, 16, 14, 14}, {32, 16, 4, 4}, 2, 1},
                                {{1, 2, 5, 5}, {3, 2, 5, 5}, 1, 2},
                                {{2, 2, 9, 8}, {2, 2, 3, 2}, 3, 1}};
  for (int seed = 0; seed < gradcheck::kSeeds; ++seed) {
    const auto& c = cases[static_cast<std::size_t>(seed) % cases.size()];
    std::mt19937_64 rng(seed);
    const auto x = oracle::random_tensor(c.x, rng);
    const auto w = oracle::random_tensor(c.w, rng);
    Shape ref_shape;
    const auto ref = oracle::conv2d_naive(x.values(), c.x, w.values(), c.w, c.stride, c.pad, &ref_shape);
    Tape<double> t;
    const auto& y = t.value(t.conv2d(t.leaf(x), t.leaf(w), {c.stride, c.pad}));
    ASSERT_EQ(y.shape(), ref_shape);
    for (std::size_t i = 0; i < ref.size(); ++i) ASSERT_NEAR(y[i], ref[i], 1e-12) << "seed " << seed;
  }
}

TEST(Tape, BiasAddBroadcastsOverChannels) {
  Tape<double> t;
  const Var x = t.leaf(Tensor<double>({1, 2, 1, 2}, {1, 2, 3, 4}));
  const Var b = t.leaf(Tensor<double>({2}, {10, 20}));
  EXPECT_EQ(t.value(t.bias_add(x, b)).values(), (std::vector<double>{11, 12, 23, 24}));
}

TEST(Tape, ElementwiseAndMean) {
  Tape<double> t;
  const Var a = t.leaf(Tensor<double>({2}, {1, 2}));
  const Var b = t.leaf(Tensor<double>({2}, {3, 5}));
  EXPECT_EQ(t.value(t.add(a, b)).values(), (std::vector<double>{4, 7}));
  EXPECT_EQ(t.value(t.sub(a, b)).values(), (std::vector<double>{-2, -3}));
  EXPECT_EQ(t.value(t.mul(a, b)).values(), (std::vector<double>{3, 10}));
  EXPECT_EQ(t.value(t.mean(b)).item(), 4.0);
}

TEST(Tape, FlattenAndReshape) {
  Tape<double> t;
  const Var x = t.leaf(Tensor<double>({2, 1, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8}));
  EXPECT_EQ(t.value(t.flatten(x)).shape(), (Shape{2, 4}));
  EXPECT_EQ(t.value(t.reshape(x, {4, 2})).values(), t.value(x).values());
  EXPECT_THROW(t.reshape(x, {3, 3}), ShapeError);
}

TEST(SoftmaxCrossEntropy, UniformLogitsGiveLogK) {
  Tape<double> t;
  const std::vector<int> y{3};
  const Var z = t.leaf(Tensor<double>({1, 10}));
  EXPECT_NEAR(t.value(t.softmax_cross_entropy(z, y)).item(), std::log(10.0), 1e-12);
}

TEST(SoftmaxCrossEntropy, GradientIsSoftmaxMinusOneHot) {
  Tape<double> t;
  const std::vector<double> z{0.5, -1.0, 2.0};
  const std::vector<int> y{1};
  const Var zv = t.leaf(Tensor<double>({1, 3}, z), true);
  t.backward(t.softmax_cross_entropy(zv, y));
  double s = 0;
  for (double v : z) s += std::exp(v);
  for (std::size_t j = 0; j < 3; ++j) {
    const double expected = std::exp(z[j]) / s - (j == 1 ? 1.0 : 0.0);
    EXPECT_NEAR(t.grad(zv)[j], expected, 1e-12);
  }
}

TEST(SoftmaxCrossEntropy, LargeLogitsDoNotOverflow) {
  Tape<double> t;
  const std::vector<int> y{0};
  const Var z = t.leaf(Tensor<double>({1, 2}, {1000, 0}));
  const double loss = t.value(t.softmax_cross_entropy(z, y)).item();
  EXPECT_TRUE(std::isfinite(loss));
  EXPECT_NEAR(loss, 0.0, 1e-12);
  Tape<float> tf;
  const Var zf = tf.leaf(Tensor<float>({1, 2}, {1000.f, 0.f}));
  EXPECT_NEAR(tf.value(tf.softmax_cross_entropy(zf, y)).item(), 0.0f, 1e-6f);
}

TEST(SoftmaxCrossEntropy, LabelOutOfRange) {
  Tape<double> t;
  const Var z = t.leaf(Tensor<double>({1, 3}));
  const std::vector<int> bad{3};
  const std::vector<int> negative{-1};
  EXPECT_THROW(t.softmax_cross_entropy(z, bad), std::out_of_range);
  EXPECT_THROW(t.softmax_cross_entropy(z, negative), std::out_of_range);
}

TEST(SoftmaxCrossEntropy, TranslationInvariant) {
  std::mt19937_64 rng(3);
  const auto z = oracle::random_tensor({4, 10}, rng, -5, 5);
  auto shifted = z;
  for (double& v : shifted.data()) v += 37.25;
  const std::vector<int> y{0, 3, 9, 5};
  Tape<double> t;
  const double a = t.value(t.softmax_cross_entropy(t.leaf(z), y)).item();
  const double b = t.value(t.softmax_cross_entropy(t.leaf(shifted), y)).item();
  EXPECT_NEAR(a, b, 1e-6);
}

// ---------------------------------------------------------------------------
// Backward semantics

TEST(Backward, SquareAtThree) {
  Tape<double> t;
  const Var x = t.leaf(Tensor<double>::scalar(3.0), true);
  t.backward(t.mul(x, x));
  EXPECT_EQ(t.grad(x)[0], 6.0);
}

TEST(Backward, IndependentParameterGetsZeroGradient) {
  Tape<double> t;
  const Var x = t.leaf(Tensor<double>::scalar(2.0), true);
  const Var theta = t.leaf(Tensor<double>({3}, {1, 2, 3}), true);
  t.backward(t.mul(x, x));
  EXPECT_EQ(t.grad(theta), (std::vector<double>{0, 0, 0}));
}

TEST(Backward, SharedInputAccumulatesBranchGradients) {
  std::mt19937_64 rng(11);
  const auto xv = oracle::random_tensor({5}, rng);
  const auto wa = oracle::random_tensor({5}, rng);
  const auto wb = oracle::random_tensor({5}, rng);
  Tape<double> t;
  const Var x = t.leaf(xv, true);
  const Var la = t.mean(t.mul(x, t.leaf(wa)));
  const Var lb = t.mean(t.mul(x, t.leaf(wb)));
  t.backward(t.add(la, lb));
  for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(t.grad(x)[i], (wa[i] + wb[i]) / 5.0, 1e-15);
}

TEST(Backward, DoesNotMutateForwardValues) {
  std::mt19937_64 rng(5);
  Tape<double> t;
  const Var x = t.leaf(oracle::random_tensor({3, 4}, rng), true);
  const Var w = t.leaf(oracle::random_tensor({4, 2}, rng), true);
  const Var h = t.relu(t.matmul(x, w));
  const std::vector<int> y{0, 1, 1};
  const Var loss = t.softmax_cross_entropy(h, y);
  const auto before_h = t.value(h);
  const auto before_loss = t.value(loss);
  t.backward(loss);
  const auto g1 = t.grad(w);
  t.backward(loss);
  EXPECT_EQ(t.value(h), before_h);
  EXPECT_EQ(t.value(loss), before_loss);
  EXPECT_EQ(t.grad(w), g1);
}

TEST(Backward, ReluPassesZeroWhereInputNegativeOrZero) {
  Tape<double> t;
  const Var x = t.leaf(Tensor<double>({4}, {-2, 0, 1, 3}), true);
  t.backward(t.mean(t.relu(x)));
  EXPECT_EQ(t.grad(x), (std::vector<double>{0, 0, 0.25, 0.25}));
}

TEST(Backward, Errors) {
  Tape<double> empty;
  EXPECT_THROW(empty.backward(Var{0}), std::logic_error);
  Tape<double> t;
  const Var x = t.leaf(Tensor<double>({2}, {1, 2}), true);
  EXPECT_THROW(t.backward(x), ShapeError);
}

TEST(Backward, CountsPasses) {
  const auto before = backward_pass_counter();
  Tape<double> t;
  const Var x = t.leaf(Tensor<double>::scalar(1.0), true);
  const Var l = t.mul(x, x);
  t.backward(l);
  t.backward(l);
  EXPECT_EQ(backward_pass_counter() - before, 2u);
}

TEST(Tape, ShapeErrors) {
  Tape<double> t;
  const Var a = t.leaf(Tensor<double>({2, 3}));
  const Var b = t.leaf(Tensor<double>({2, 3}));
  EXPECT_THROW(t.matmul(a, b), ShapeError);
  const Var img = t.leaf(Tensor<double>({1, 1, 2, 2}));
  const Var k = t.leaf(Tensor<double>({1, 1, 3, 3}));
  EXPECT_THROW(t.conv2d(img, k, {1, 0}), ShapeError);
  const Var c = t.leaf(Tensor<double>({3}));
  EXPECT_THROW(t.add(c, t.leaf(Tensor<double>({4}))), ShapeError);
}

TEST(Tape, RejectsNonFiniteValues) {
  Tape<double> t;
  EXPECT_THROW(t.leaf(Tensor<double>({2}, {1.0, std::numeric_limits<double>::quiet_NaN()})), NonFiniteError);
  EXPECT_THROW(t.leaf(Tensor<double>({1}, {std::numeric_limits<double>::infinity()})), NonFiniteError);
  const Var big = t.leaf(Tensor<double>({1}, {1e300}));
  EXPECT_THROW(t.mul(big, big), NonFiniteError);
}

TEST(Tensor, Invariants) {
  EXPECT_THROW(Tensor<double>({2, 0}), ShapeError);
  EXPECT_THROW(Tensor<double>({2, 2}, {1, 2, 3}), ShapeError);
  Tensor<double> t({2, 2});
  EXPECT_THROW(t.set_grad({1, 2}), ShapeError);
  t.set_grad({1, 2, 3, 4});
  EXPECT_TRUE(t.has_grad());
}

// ---------------------------------------------------------------------------
// Finite-difference gradient checks, one per op, over 20 seeds

class GradCheck : public ::testing::TestWithParam<gradcheck::OpCase> {};

TEST_P(GradCheck, MatchesCentralDifferences) {
  const auto c = GetParam();
  for (int s = 0; s < gradcheck::kSeeds; ++s) {
    EXPECT_LT(c.f64(s), gradcheck::kTol64) << c.name << " seed " << s;
    EXPECT_LT(c.f32(s), gradcheck::kTol32) << c.name << " seed " << s;
  }
}

INSTANTIATE_TEST_SUITE_P(Ops, GradCheck, ::testing::ValuesIn(gradcheck::op_cases()),
                         [](const auto& info) { return std::string(info.param.name); });

// 20 random small models (< 5k parameters), gradients w.r.t. every
// parameter and the input.
TEST(GradCheckModels, RandomSmallModels) {
  for (int s = 0; s < gradcheck::kSeeds; ++s) {
    const auto c = gradcheck::small_model(s);
    ASSERT_LE(c.model.parameter_count(), 5000u);
    EXPECT_LT(gradcheck::small_model_error<double>(c), gradcheck::kTol64) << "seed " << s;
    EXPECT_LT(gradcheck::small_model_error<float>(c), gradcheck::kTol32) << "seed " << s;

    // Model::forward must produce the same loss and parameter gradients as
    // the graph checked above.
    Tape<double> t1, t2;
    std::vector<Var> v;
    for (const auto& x : c.inputs) v.push_back(t1.leaf(x, true));
    const Var direct = c.graph(t1, v);
    t1.backward(direct);
    const auto f = c.model.forward(t2, t2.leaf(c.inputs[0]), true);
    const Var loss = t2.softmax_cross_entropy(f.logits, c.graph.labels);
    t2.backward(loss);
    EXPECT_NEAR(t2.value(loss).item(), t1.value(direct).item(), 1e-12);
    for (std::size_t i = 0; i < f.params.size(); ++i) {
      const auto& g1 = t1.grad(v[i + 1]);
      const auto& g2 = t2.grad(f.params[i]);
      for (std::size_t k = 0; k < g1.size(); ++k) ASSERT_NEAR(g1[k], g2[k], 1e-12);
    }
  }
}
