#ifndef FASTADV_TESTS_GRADCHECK_CASES_HPP
#define FASTADV_TESTS_GRADCHECK_CASES_HPP

// Finite-difference gradient cases shared by the unit tests and the
// acceptance run. Each case returns the largest relative error between
// tape gradients at precision T and double-precision central differences.

#include <cstdint>
#include <random>
#include <vector>

#include "fastadv/core/rng.hpp"
#include "fastadv/nn/model.hpp"
#include "support/oracles.hpp"

namespace gradcheck {

using fastadv::Architecture;
using fastadv::LayerKind;
using fastadv::Model;
using fastadv::Shape;
using fastadv::Tape;
using fastadv::Tensor;
using fastadv::Var;

inline constexpr int kSeeds = 20;
inline constexpr double kTol64 = 1e-4;
inline constexpr double kTol32 = 1e-2;

/// Reduces any tensor to a scalar through a fixed random weighting so every
/// output coordinate contributes a distinct gradient.
template <typename T>
Var weighted_sum(Tape<T>& tape, Var out, std::uint64_t seed) {
  std::mt19937_64 rng(seed * 7919 + 1);
  const auto r = oracle::random_tensor(tape.value(out).shape(), rng);
  return tape.mean(tape.mul(out, tape.leaf(r.template cast<T>())));
}

template <typename T>
double matmul(int s) {
  std::mt19937_64 rng(s);
  const std::size_t m = 1 + s % 4, k = 2 + s % 3, n = 1 + s % 5;
  return oracle::max_gradient_error<T>([s](auto& t, const auto& v) { return weighted_sum(t, t.matmul(v[0], v[1]), s); },
                                       {oracle::random_tensor({m, k}, rng), oracle::random_tensor({k, n}, rng)},
                                       {true, true});
}

template <typename T>
double bias_add(int s) {
  std::mt19937_64 rng(s);
  const Shape xs = s % 2 ? Shape{3, 4} : Shape{2, 3, 2, 2};
  return oracle::max_gradient_error<T>(
      [s](auto& t, const auto& v) { return weighted_sum(t, t.bias_add(v[0], v[1]), s); },
      {oracle::random_tensor(xs, rng), oracle::random_tensor({xs[1]}, rng)}, {true, true});
}

template <typename T>
double conv2d(int s) {
  std::mt19937_64 rng(s);
  const std::size_t stride = 1 + s % 2, pad = s % 3 == 0 ? 1 : 0;
  const std::size_t c = 1 + s % 2;
  return oracle::max_gradient_error<T>(
      [s, stride, pad](auto& t, const auto& v) { return weighted_sum(t, t.conv2d(v[0], v[1], {stride, pad}), s); },
      {oracle::random_tensor({2, c, 5, 6}, rng), oracle::random_tensor({3, c, 3, 2}, rng)}, {true, true});
}

template <typename T>
double relu(int s) {
  std::mt19937_64 rng(s);
  return oracle::max_gradient_error<T>([s](auto& t, const auto& v) { return weighted_sum(t, t.relu(v[0]), s); },
                                       {oracle::random_tensor_away_from_zero({3, 7}, rng)}, {true});
}

template <typename T>
double flatten_reshape(int s) {
  std::mt19937_64 rng(s);
  return oracle::max_gradient_error<T>(
      [s](auto& t, const auto& v) { return weighted_sum(t, t.reshape(t.flatten(v[0]), {4, 6}), s); },
      {oracle::random_tensor({2, 3, 2, 2}, rng)}, {true});
}

template <typename T>
double mean(int s) {
  std::mt19937_64 rng(s);
  return oracle::max_gradient_error<T>([](auto& t, const auto& v) { return t.mean(t.mul(v[0], v[0])); },
                                       {oracle::random_tensor({1 + static_cast<std::size_t>(s), 3}, rng)}, {true});
}

template <typename T, int Op>
double binary(int s) {
  std::mt19937_64 rng(s);
  return oracle::max_gradient_error<T>(
      [s](auto& t, const auto& v) {
        const Var out = Op == 0 ? t.add(v[0], v[1]) : Op == 1 ? t.sub(v[0], v[1]) : t.mul(v[0], v[1]);
        return weighted_sum(t, out, s);
      },
      {oracle::random_tensor({4, 3}, rng), oracle::random_tensor({4, 3}, rng)}, {true, true});
}

template <typename T>
double softmax_cross_entropy(int s) {
  std::mt19937_64 rng(s);
  const std::size_t n = 1 + s % 5, k = 2 + s % 9;
  std::vector<int> y(n);
  for (auto& v : y) v = static_cast<int>(rng() % k);
  return oracle::max_gradient_error<T>([&y](auto& t, const auto& v) { return t.softmax_cross_entropy(v[0], y); },
                                       {oracle::random_tensor({n, k}, rng, -3, 3)}, {true});
}

struct OpCase {
  const char* name;
  double (*f64)(int);
  double (*f32)(int);
};

inline std::vector<OpCase> op_cases() {
  return {{"matmul", matmul<double>, matmul<float>},
          {"bias_add", bias_add<double>, bias_add<float>},
          {"conv2d", conv2d<double>, conv2d<float>},
          {"relu", relu<double>, relu<float>},
          {"flatten_reshape", flatten_reshape<double>, flatten_reshape<float>},
          {"mean", mean<double>, mean<float>},
          {"add", binary<double, 0>, binary<float, 0>},
          {"sub", binary<double, 1>, binary<float, 1>},
          {"mul", binary<double, 2>, binary<float, 2>},
          {"softmax_cross_entropy", softmax_cross_entropy<double>, softmax_cross_entropy<float>}};
}

/// Loss graph of a small architecture written directly against the tape.
/// Leaf 0 is the input; the rest are parameters in model order.
struct SmallModelGraph {
  Architecture arch;
  std::vector<int> labels;

  template <typename TapeT, typename Vars>
  Var operator()(TapeT& t, const Vars& v) const {
    Var h = v[0];
    std::size_t pi = 1;
    for (const auto& l : arch.layers) {
      switch (l.kind) {
        case LayerKind::conv2d:
          h = t.bias_add(t.conv2d(h, v[pi], {l.stride, l.padding}), v[pi + 1]);
          pi += 2;
          break;
        case LayerKind::relu: h = t.relu(h); break;
        case LayerKind::flatten: h = t.flatten(h); break;
        case LayerKind::dense:
          h = t.bias_add(t.matmul(h, v[pi]), v[pi + 1]);
          pi += 2;
          break;
      }
    }
    return t.softmax_cross_entropy(h, labels);
  }
};

struct SmallModelCase {
  Model<double> model;
  SmallModelGraph graph;
  std::vector<Tensor<double>> inputs;  // input batch, then every parameter
};

/// Random MLP (even seeds) or conv net (odd seeds), all under 5k parameters.
inline SmallModelCase small_model(int s) {
  std::mt19937_64 rng(1000 + s);
  Architecture a;
  a.name = "small";
  a.num_classes = 3 + s % 3;
  if (s % 2 == 0) {
    const std::size_t hidden = 4 + s % 5;
    a.input = {6};
    a.layers = {{LayerKind::dense, 6, hidden}, {LayerKind::relu}, {LayerKind::dense, hidden, a.num_classes}};
  } else {
    a.input = {1, 6, 6};
    a.layers = {{LayerKind::conv2d, 1, 2, 3, 1, 1}, {LayerKind::relu},
                {LayerKind::flatten},              {LayerKind::dense, 72, 8},
                {LayerKind::relu},                 {LayerKind::dense, 8, a.num_classes}};
  }
  Model<double> model(a);
  fastadv::Rng init = fastadv::make_rng(static_cast<std::uint64_t>(s), {fastadv::stream::init});
  init_parameters(model, init);
  for (auto& p : model.parameters()) {
    if (p.value.rank() == 1) p.value = oracle::random_tensor(p.value.shape(), rng, -0.5, 0.5);
  }
  const std::size_t batch = 3;
  Shape xs{batch};
  xs.insert(xs.end(), a.input.begin(), a.input.end());
  std::vector<int> y(batch);
  for (auto& v : y) v = static_cast<int>(rng() % a.num_classes);
  std::vector<Tensor<double>> inputs{oracle::random_tensor(xs, rng, 0, 1)};
  for (const auto& p : model.parameters()) inputs.push_back(p.value);
  return {std::move(model), {a, y}, std::move(inputs)};
}

template <typename T>
double small_model_error(const SmallModelCase& c) {
  return oracle::max_gradient_error<T>(c.graph, c.inputs, std::vector<bool>(c.inputs.size(), true));
}

}  // namespace gradcheck

#endif  // FASTADV_TESTS_GRADCHECK_CASES_HPP
