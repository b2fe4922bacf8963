#ifndef FASTADV_NN_MODEL_HPP
#define FASTADV_NN_MODEL_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "fastadv/core/rng.hpp"
#include "fastadv/core/tape.hpp"
#include "fastadv/core/tensor.hpp"

namespace fastadv {

enum class LayerKind { conv2d, relu, flatten, dense };

struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  std::size_t in = 0;
  std::size_t out = 0;
  std::size_t kernel = 0;
  std::size_t stride = 1;
  std::size_t padding = 0;
};

/// Self-describing layer stack. The descriptor string is what checkpoints
/// store and compare against.
struct Architecture {
  std::string name;
  Shape input;  // one example, without the batch dimension
  std::size_t num_classes = 0;
  std::vector<LayerSpec> layers;

  std::string descriptor() const {
    std::ostringstream os;
    os << name << ":in=";
    for (std::size_t i = 0; i < input.size(); ++i) os << (i ? "x" : "") << input[i];
    os << ':';
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto& l = layers[i];
      if (i) os << ';';
      switch (l.kind) {
        case LayerKind::conv2d:
          os << "conv(" << l.in << ',' << l.out << ",k" << l.kernel << ",s" << l.stride << ",p" << l.padding
             << ')';
          break;
        case LayerKind::relu: os << "relu"; break;
        case LayerKind::flatten: os << "flatten"; break;
        case LayerKind::dense: os << "dense(" << l.in << ',' << l.out << ')'; break;
      }
    }
    return os.str();
  }
};

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
};

/// Sequential classifier f_theta: batch [n, input...] -> logits [n, classes].
template <typename T>
class Model {
 public:
  struct Forward {
    Var logits;
    std::vector<Var> params;  // same order as parameters()
  };

  Model() = default;

  explicit Model(Architecture arch) : arch_(std::move(arch)) {
    Shape s = arch_.input;
    std::size_t conv_i = 0, dense_i = 0;
    for (const auto& l : arch_.layers) {
      switch (l.kind) {
        case LayerKind::conv2d: {
          if (s.size() != 3 || s[0] != l.in) throw ShapeError("conv layer input mismatch in " + arch_.name);
          if (s[1] + 2 * l.padding < l.kernel || s[2] + 2 * l.padding < l.kernel || l.stride == 0) {
            throw ShapeError("conv kernel larger than padded input in " + arch_.name);
          }
          const std::string base = "conv" + std::to_string(++conv_i);
          params_.push_back({base + ".weight", Tensor<T>({l.out, l.in, l.kernel, l.kernel})});
          params_.push_back({base + ".bias", Tensor<T>({l.out})});
          s = {l.out, (s[1] + 2 * l.padding - l.kernel) / l.stride + 1,
               (s[2] + 2 * l.padding - l.kernel) / l.stride + 1};
          break;
        }
        case LayerKind::relu: break;
        case LayerKind::flatten: s = {numel(s)}; break;
        case LayerKind::dense: {
          if (numel(s) != l.in) throw ShapeError("dense layer input mismatch in " + arch_.name);
          const std::string base = "fc" + std::to_string(++dense_i);
          params_.push_back({base + ".weight", Tensor<T>({l.in, l.out})});
          params_.push_back({base + ".bias", Tensor<T>({l.out})});
          s = {l.out};
          break;
        }
      }
    }
    if (s.size() != 1 || s[0] != arch_.num_classes) {
      throw ShapeError("architecture " + arch_.name + " does not end in " +
                       std::to_string(arch_.num_classes) + " logits");
    }
  }

  const Architecture& architecture() const noexcept { return arch_; }
  std::vector<Parameter<T>>& parameters() noexcept { return params_; }
  const std::vector<Parameter<T>>& parameters() const noexcept { return params_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  Parameter<T>& parameter(const std::string& name) {
    for (auto& p : params_) {
      if (p.name == name) return p;
    }
    throw std::out_of_range("no parameter named " + name);
  }

  const Parameter<T>& parameter(const std::string& name) const {
    return const_cast<Model*>(this)->parameter(name);
  }

  Forward forward(Tape<T>& tape, Var input, bool params_require_grad) const {
    Forward f;
    f.params.reserve(params_.size());
    for (const auto& p : params_) f.params.push_back(tape.leaf(p.value, params_require_grad));
    const Shape& xs = tape.value(input).shape();
    if (xs.size() != arch_.input.size() + 1 || !std::equal(arch_.input.begin(), arch_.input.end(), xs.begin() + 1)) {
      throw ShapeError("model " + arch_.name + " got input " + to_string(xs));
    }
    Var h = input;
    std::size_t pi = 0;
    for (const auto& l : arch_.layers) {
      switch (l.kind) {
        case LayerKind::conv2d:
          h = tape.conv2d(h, f.params[pi], {l.stride, l.padding});
          h = tape.bias_add(h, f.params[pi + 1]);
          pi += 2;
          break;
        case LayerKind::relu: h = tape.relu(h); break;
        case LayerKind::flatten: h = tape.flatten(h); break;
        case LayerKind::dense:
          if (tape.value(h).rank() != 2) h = tape.flatten(h);
          h = tape.matmul(h, f.params[pi]);
          h = tape.bias_add(h, f.params[pi + 1]);
          pi += 2;
          break;
      }
    }
    f.logits = h;
    return f;
  }

  Tensor<T> logits(const Tensor<T>& x) const {
    Tape<T> tape;
    const Var in = tape.leaf(x);
    return tape.value(forward(tape, in, false).logits);
  }

  template <typename U>
  Model<U> cast() const {
    Model<U> m(arch_);
    for (std::size_t i = 0; i < params_.size(); ++i) m.parameters()[i].value = params_[i].value.template cast<U>();
    return m;
  }

 private:
  Architecture arch_;
  std::vector<Parameter<T>> params_;
};

/// Two conv layers (16 and 32 filters, kernel 4, stride 2, padding 1), then
/// a 100-unit dense layer and 10 logits, on 1x28x28 inputs.
inline Architecture mnist_cnn_architecture() {
  Architecture a;
  a.name = "mnist_cnn";
  a.input = {1, 28, 28};
  a.num_classes = 10;
  a.layers = {
      {LayerKind::conv2d, 1, 16, 4, 2, 1},
      {LayerKind::relu},
      {LayerKind::conv2d, 16, 32, 4, 2, 1},
      {LayerKind::relu},
      {LayerKind::flatten},
      {LayerKind::dense, 32 * 7 * 7, 100},
      {LayerKind::relu},
      {LayerKind::dense, 100, 10},
  };
  return a;
}

/// Single dense layer on inputs of any shape (flattened).
inline Architecture linear_architecture(Shape input, std::size_t num_classes) {
  if (input.empty() || numel(input) < 1 || num_classes < 2) {
    throw std::invalid_argument("linear model needs a non-empty input and >= 2 classes");
  }
  Architecture a;
  a.name = "linear";
  a.input = std::move(input);
  a.num_classes = num_classes;
  a.layers = {{LayerKind::dense, numel(a.input), num_classes}};
  return a;
}

inline Architecture linear_architecture(std::size_t d, std::size_t num_classes) {
  if (d < 1) throw std::invalid_argument("linear model needs d >= 1");
  return linear_architecture(Shape{d}, num_classes);
}

template <typename T>
Model<T> build_mnist_cnn() {
  return Model<T>(mnist_cnn_architecture());
}

template <typename T>
Model<T> build_linear(std::size_t d, std::size_t num_classes) {
  return Model<T>(linear_architecture(d, num_classes));
}

/// Weights ~ Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases zero.
template <typename T>
void init_parameters(Model<T>& model, Rng& rng) {
  for (auto& p : model.parameters()) {
    auto& v = p.value;
    if (v.rank() == 1) {
      std::fill(v.data().begin(), v.data().end(), T{0});
      continue;
    }
    // conv weight [out,in,k,k] has fan-in in*k*k; dense weight [in,out] has fan-in in
    const std::size_t fan_in = v.rank() == 4 ? v.size() / v.dim(0) : v.dim(0);
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (T& w : v.data()) w = static_cast<T>(dist(rng));
  }
}

/// FNV-1a over the raw parameter bytes.
template <typename T>
std::uint64_t parameter_hash(const Model<T>& model) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& p : model.parameters()) {
    for (T v : p.value.data()) {
      unsigned char bytes[sizeof(T)];
      std::memcpy(bytes, &v, sizeof(T));
      for (unsigned char b : bytes) {
        h ^= b;
        h *= 0x100000001b3ULL;
      }
    }
  }
  return h;
}

}  // namespace fastadv

#endif  // FASTADV_NN_MODEL_HPP
