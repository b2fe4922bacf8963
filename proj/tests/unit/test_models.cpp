#include <cmath>
#include <random>
#include <set>
#include <vector>

#include <gtest/gtest.h>

#include "fastadv/nn/model.hpp"
#include "support/oracles.hpp"

using namespace fastadv;

namespace {

Model<double> seeded_cnn(std::uint64_t seed) {
  auto m = build_mnist_cnn<double>();
  Rng rng = make_rng(seed, {stream::init});
  init_parameters(m, rng);
  return m;
}

std::size_t conv_out(std::size_t in, std::size_t k, std::size_t s, std::size_t p) { return (in + 2 * p - k) / s + 1; }

}  // namespace

TEST(MnistCnn, OutputShape) {
  const auto m = seeded_cnn(0);
  std::mt19937_64 rng(1);
  const auto x = oracle::random_tensor({8, 1, 28, 28}, rng, 0, 1);
  EXPECT_EQ(m.logits(x).shape(), (Shape{8, 10}));
}

TEST(MnistCnn, UntrainedLossNearLogTen) {
  const auto m = seeded_cnn(0);
  const auto x = Tensor<double>::full({16, 1, 28, 28}, 0.5);
  std::vector<int> y(16);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = static_cast<int>(i % 10);
  Tape<double> t;
  const auto f = m.forward(t, t.leaf(x), false);
  EXPECT_NEAR(t.value(t.softmax_cross_entropy(f.logits, y)).item(), std::log(10.0), 0.1);
}

TEST(MnistCnn, ParameterCountMatchesLayerArithmetic) {
  const std::size_t h1 = conv_out(28, 4, 2, 1), h2 = conv_out(h1, 4, 2, 1);
  const std::size_t expected = (16 * 1 * 4 * 4 + 16) + (32 * 16 * 4 * 4 + 32) + (32 * h2 * h2 * 100 + 100) + (100 * 10 + 10);
  EXPECT_EQ(h2, 7u);
  EXPECT_EQ(build_mnist_cnn<float>().parameter_count(), expected);
  EXPECT_EQ(expected, 166406u);
}

TEST(MnistCnn, DescriptorRecordsKernelStridePadding) {
  EXPECT_EQ(mnist_cnn_architecture().descriptor(),
            "mnist_cnn:in=1x28x28:conv(1,16,k4,s2,p1);relu;conv(16,32,k4,s2,p1);relu;flatten;dense(1568,100);relu;"
            "dense(100,10)");
}

TEST(MnistCnn, ParameterNamesUnique) {
  const auto m = build_mnist_cnn<float>();
  std::set<std::string> names;
  for (const auto& p : m.parameters()) names.insert(p.name);
  EXPECT_EQ(names.size(), m.parameters().size());
  EXPECT_EQ(m.parameters().front().name, "conv1.weight");
}

TEST(MnistCnn, ForwardIsDeterministicAndPure) {
  const auto m = seeded_cnn(4);
  std::mt19937_64 rng(2);
  const auto x = oracle::random_tensor({3, 1, 28, 28}, rng, 0, 1);
  const auto before = parameter_hash(m);
  EXPECT_EQ(m.logits(x), m.logits(x));
  EXPECT_EQ(parameter_hash(m), before);
}

TEST(MnistCnn, RejectsWrongInputShape) {
  const auto m = build_mnist_cnn<double>();
  EXPECT_THROW(m.logits(Tensor<double>({2, 1, 27, 28})), ShapeError);
  EXPECT_THROW(m.logits(Tensor<double>({2, 784})), ShapeError);
}

TEST(Linear, LogitsAreAffine) {
  auto m = build_linear<double>(3, 2);
  std::mt19937_64 rng(9);
  for (auto& p : m.parameters()) p.value = oracle::random_tensor(p.value.shape(), rng);
  const auto x = oracle::random_tensor({4, 3}, rng);
  const auto z = m.logits(x);
  const auto& W = m.parameter("fc1.weight").value;  // [in, out]
  const auto& b = m.parameter("fc1.bias").value;
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t k = 0; k < 2; ++k) {
      double s = b[k];
      for (std::size_t j = 0; j < 3; ++j) s += W[j * 2 + k] * x[i * 3 + j];
      EXPECT_NEAR(z[i * 2 + k], s, 1e-14);
    }
}

TEST(Linear, BinaryWorstCasePerturbationIsSignOfWeightGap) {
  auto m = build_linear<double>(5, 2);
  std::mt19937_64 rng(4);
  for (auto& p : m.parameters()) p.value = oracle::random_tensor(p.value.shape(), rng);
  const auto& W = m.parameter("fc1.weight").value;
  const auto x = oracle::random_tensor({1, 5}, rng);
  const int y = 1;
  const double eps = 0.2;
  std::vector<double> wy(5), wo(5);
  for (std::size_t j = 0; j < 5; ++j) {
    wy[j] = W[j * 2 + 1];
    wo[j] = W[j * 2 + 0];
  }
  auto loss_at = [&](const std::vector<double>& d) {
    Tensor<double> xd = x;
    for (std::size_t j = 0; j < 5; ++j) xd[j] += d[j];
    return cross_entropy_per_row(m.logits(xd), std::vector<int>{y})[0];
  };
  std::vector<double> star(5);
  for (std::size_t j = 0; j < 5; ++j) star[j] = -eps * ((wy[j] - wo[j]) > 0 ? 1.0 : -1.0);
  const auto z = m.logits(x);
  const double worst = oracle::linear_worst_case_loss(wy, wo, z[1] - z[0], eps);
  EXPECT_NEAR(loss_at(star), worst, 1e-12);
  std::uniform_real_distribution<double> u(-eps, eps);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> d(5);
    for (auto& v : d) v = u(rng);
    EXPECT_LE(loss_at(d), worst + 1e-12);
  }
}

TEST(Linear, GradientCheck) {
  const Architecture a = linear_architecture(4, 3);
  std::mt19937_64 rng(8);
  const std::vector<int> y{0, 2};
  const std::vector<Tensor<double>> in{oracle::random_tensor({2, 4}, rng), oracle::random_tensor({4, 3}, rng),
                                       oracle::random_tensor({3}, rng)};
  auto build = [&y](auto& t, const auto& v) {
    return t.softmax_cross_entropy(t.bias_add(t.matmul(v[0], v[1]), v[2]), y);
  };
  EXPECT_LT(oracle::max_gradient_error<double>(build, in, {true, true, true}), 1e-4);
  EXPECT_EQ(Model<double>(a).parameter_count(), 15u);
}

TEST(Linear, AcceptsImageShapedInput) {
  const auto m = Model<float>(linear_architecture(Shape{1, 28, 28}, 10));
  EXPECT_EQ(m.parameter_count(), 7850u);
  EXPECT_EQ(m.logits(Tensor<float>({2, 1, 28, 28})).shape(), (Shape{2, 10}));
  EXPECT_THROW(build_linear<float>(0, 2), std::invalid_argument);
}

TEST(Init, SameSeedIsBitIdentical) {
  EXPECT_EQ(parameter_hash(seeded_cnn(7)), parameter_hash(seeded_cnn(7)));
  const auto a = seeded_cnn(7), b = seeded_cnn(7);
  for (std::size_t i = 0; i < a.parameters().size(); ++i) EXPECT_EQ(a.parameters()[i].value, b.parameters()[i].value);
}

TEST(Init, DifferentSeedsDiffer) { EXPECT_NE(parameter_hash(seeded_cnn(1)), parameter_hash(seeded_cnn(2))); }

TEST(Init, BiasesZeroAndWeightsBounded) {
  const auto m = seeded_cnn(3);
  for (const auto& p : m.parameters()) {
    if (p.value.rank() == 1) {
      for (double v : p.value.data()) EXPECT_EQ(v, 0.0);
      continue;
    }
    const double fan_in = p.value.rank() == 4 ? static_cast<double>(p.value.size() / p.value.dim(0))
                                              : static_cast<double>(p.value.dim(0));
    EXPECT_LE(max_abs(p.value), 1.0 / std::sqrt(fan_in));
  }
}

// Uniform(-b, b) has standard deviation b / sqrt(3) with b = 1/sqrt(fan_in).
TEST(Init, EmpiricalStddevMatchesFanInTarget) {
  const std::vector<std::pair<std::string, double>> layers{
      {"conv1.weight", 16.0}, {"conv2.weight", 256.0}, {"fc1.weight", 1568.0}, {"fc2.weight", 100.0}};
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto m = seeded_cnn(seed);
    for (const auto& [name, fan_in] : layers) {
      const auto& v = m.parameter(name).value;
      double s = 0, ss = 0;
      for (double x : v.data()) {
        s += x;
        ss += x * x;
      }
      const double n = static_cast<double>(v.size());
      const double sd = std::sqrt(ss / n - (s / n) * (s / n));
      const double target = 1.0 / std::sqrt(fan_in) / std::sqrt(3.0);
      EXPECT_NEAR(sd / target, 1.0, 0.2) << name << " seed " << seed;
    }
  }
}

TEST(Model, CastPreservesValues) {
  const auto m = seeded_cnn(5);
  const auto f = m.cast<float>();
  EXPECT_EQ(f.architecture().descriptor(), m.architecture().descriptor());
  EXPECT_EQ(f.parameters()[0].value[3], static_cast<float>(m.parameters()[0].value[3]));
}

TEST(Model, RejectsInconsistentArchitecture) {
  Architecture a;
  a.name = "bad";
  a.input = {4};
  a.num_classes = 3;
  a.layers = {{LayerKind::dense, 5, 3}};
  EXPECT_THROW(Model<double>{a}, ShapeError);
  a.layers = {{LayerKind::dense, 4, 2}};
  EXPECT_THROW(Model<double>{a}, ShapeError);
}
