#ifndef FASTADV_ATTACK_ATTACK_HPP
#define FASTADV_ATTACK_ATTACK_HPP

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "fastadv/core/error.hpp"
#include "fastadv/core/rng.hpp"
#include "fastadv/core/tape.hpp"
#include "fastadv/nn/model.hpp"

namespace fastadv {

/// Starting point of an attack.
///
/// `hypercube_surface` draws (eps/2) * sign(N(0,1)) per coordinate;
/// `scaled_normal` is the raw (eps/2) * N(0,1) variant, projected back onto
/// the eps-ball. `previous` reuses a carried perturbation.
enum class InitKind { zero, uniform, hypercube_surface, scaled_normal, previous };

inline std::string to_string(InitKind k) {
  switch (k) {
    case InitKind::zero: return "zero";
    case InitKind::uniform: return "uniform";
    case InitKind::hypercube_surface: return "hypercube_surface";
    case InitKind::scaled_normal: return "scaled_normal";
    case InitKind::previous: return "previous";
  }
  return "?";
}

inline InitKind parse_init_kind(std::string_view s) {
  for (InitKind k : {InitKind::zero, InitKind::uniform, InitKind::hypercube_surface, InitKind::scaled_normal,
                     InitKind::previous}) {
    if (s == to_string(k)) return k;
  }
  throw ConfigError("unknown init kind '" + std::string(s) + "'");
}

/// l_inf attack parameters, all in pixel units.
struct AttackSpec {
  double epsilon = 0.0;
  double alpha = 0.0;
  int steps = 0;
  int restarts = 1;
  InitKind init = InitKind::zero;
  bool clamp_image = true;

  void validate() const {
    if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw ConfigError("attack epsilon must be >= 0");
    if (steps < 0) throw ConfigError("attack steps must be >= 0");
    if (steps > 0 && !(alpha > 0.0)) throw ConfigError("attack alpha must be > 0 when steps > 0");
    if (restarts < 1) throw ConfigError("attack restarts must be >= 1");
  }

  friend bool operator==(const AttackSpec&, const AttackSpec&) = default;
};

/// Single full-size signed step from zero: the classic FGSM adversary.
inline AttackSpec fgsm_spec(double epsilon, bool clamp_image = true) {
  return AttackSpec{epsilon, epsilon, 1, 1, InitKind::zero, clamp_image};
}

template <typename T>
T sign_of(T v) {
  return v > T{0} ? T{1} : v < T{0} ? T{-1} : T{0};
}

template <typename T>
Tensor<T> project_linf(Tensor<T> delta, double epsilon) {
  const T e = static_cast<T>(epsilon);
  for (T& v : delta.data()) v = std::max(std::min(v, e), -e);
  return delta;
}

/// Shrinks delta so that x + delta stays inside [0, 1]. Coordinates that
/// are already valid are returned bit-for-bit unchanged.
template <typename T>
Tensor<T> clamp_to_image(const Tensor<T>& x, Tensor<T> delta) {
  if (x.shape() != delta.shape()) throw ShapeError("clamp_to_image: shape mismatch");
  auto xs = x.data();
  auto ds = delta.data();
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const T sum = xs[i] + ds[i];
    if (sum > T{1}) {
      ds[i] = T{1} - xs[i];
    } else if (sum < T{0}) {
      ds[i] = -xs[i];
    }
  }
  return delta;
}

template <typename T>
Tensor<T> init_delta(const AttackSpec& spec, const Shape& batch_shape, Rng& rng,
                     const Tensor<T>* carried = nullptr) {
  Tensor<T> delta(batch_shape);
  const double eps = spec.epsilon;
  switch (spec.init) {
    case InitKind::zero:
      break;
    case InitKind::uniform: {
      std::uniform_real_distribution<double> dist(-eps, eps);
      for (T& v : delta.data()) v = static_cast<T>(dist(rng));
      break;
    }
    case InitKind::hypercube_surface: {
      std::normal_distribution<double> normal(0.0, 1.0);
      for (T& v : delta.data()) v = static_cast<T>(0.5 * eps * sign_of(normal(rng)));
      break;
    }
    case InitKind::scaled_normal: {
      std::normal_distribution<double> normal(0.0, 1.0);
      for (T& v : delta.data()) v = static_cast<T>(0.5 * eps * normal(rng));
      delta = project_linf(std::move(delta), eps);
      break;
    }
    case InitKind::previous: {
      if (carried == nullptr || carried->empty()) throw std::invalid_argument("previous init needs a carried delta");
      const Shape& cs = carried->shape();
      if (cs.size() != batch_shape.size() || !std::equal(cs.begin() + 1, cs.end(), batch_shape.begin() + 1)) {
        throw ShapeError("carried delta " + to_string(cs) + " incompatible with batch " + to_string(batch_shape));
      }
      const std::size_t n = std::min(cs[0], batch_shape[0]) * (delta.size() / batch_shape[0]);
      std::copy_n(carried->data().begin(), n, delta.data().begin());
      delta = project_linf(std::move(delta), eps);
      break;
    }
  }
  return delta;
}

template <typename T>
Tensor<T> plus(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) throw ShapeError("plus: shape mismatch");
  Tensor<T> out = a;
  out.set_requires_grad(false);
  auto o = out.data();
  auto y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += y[i];
  return out;
}

template <typename T>
struct InputGradient {
  Tensor<T> grad;  // d(mean loss)/d(delta)
  T loss = 0;
};

/// One backward pass of the batch-mean loss at x + delta, w.r.t. delta only.
template <typename T>
InputGradient<T> input_gradient(const Model<T>& model, const Tensor<T>& x, std::span<const int> labels,
                                const Tensor<T>& delta) {
  Tape<T> tape;
  const Var xv = tape.leaf(x, false);
  const Var dv = tape.leaf(delta, true);
  const auto f = model.forward(tape, tape.add(xv, dv), false);
  const Var loss = tape.softmax_cross_entropy(f.logits, labels);
  tape.backward(loss);
  InputGradient<T> out{tape.grad_tensor(dv), tape.value(loss).item()};
  if (!out.grad.all_finite()) throw NonFiniteError("non-finite input gradient");
  return out;
}

/// delta <- clip_eps(delta + alpha * sign(grad)), then the image-range clamp.
template <typename T>
Tensor<T> signed_step(const Tensor<T>& x, Tensor<T> delta, const Tensor<T>& grad, double alpha, double epsilon,
                      bool clamp_image) {
  const T a = static_cast<T>(alpha);
  auto d = delta.data();
  auto g = grad.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += a * sign_of(g[i]);
  delta = project_linf(std::move(delta), epsilon);
  if (clamp_image) delta = clamp_to_image(x, std::move(delta));
  return delta;
}

template <typename T>
Tensor<T> fgsm_step(const Model<T>& model, const Tensor<T>& x, std::span<const int> labels, Tensor<T> delta,
                    double alpha, double epsilon, bool clamp_image) {
  const auto g = input_gradient(model, x, labels, delta);
  return signed_step(x, std::move(delta), g.grad, alpha, epsilon, clamp_image);
}

/// Initial perturbation for one restart, already clamped to the image range.
template <typename T>
Tensor<T> start_delta(const AttackSpec& spec, const Tensor<T>& x, Rng& rng, const Tensor<T>* carried = nullptr) {
  Tensor<T> d = init_delta<T>(spec, x.shape(), rng, carried);
  if (spec.clamp_image) d = clamp_to_image(x, std::move(d));
  return d;
}

template <typename T>
struct AttackResult {
  Tensor<T> delta;            // per example, the highest-loss final point over restarts
  std::vector<char> success;  // any restart's final point misclassified
  std::vector<T> loss;        // loss at the returned delta
};

template <typename T>
AttackResult<T> pgd_attack(const Model<T>& model, const Tensor<T>& x, std::span<const int> labels,
                           const AttackSpec& spec, Rng& rng) {
  spec.validate();
  if (spec.init == InitKind::previous) throw std::invalid_argument("pgd_attack cannot use previous init");
  const std::size_t n = labels.size();
  const std::size_t row = x.size() / n;
  AttackResult<T> out{Tensor<T>(x.shape()), std::vector<char>(n, 0),
                      std::vector<T>(n, -std::numeric_limits<T>::infinity())};
  for (int r = 0; r < spec.restarts; ++r) {
    Tensor<T> delta = start_delta(spec, x, rng);
    for (int s = 0; s < spec.steps; ++s) {
      delta = fgsm_step(model, x, labels, std::move(delta), spec.alpha, spec.epsilon, spec.clamp_image);
    }
    const Tensor<T> logits = model.logits(plus(x, delta));
    const auto losses = cross_entropy_per_row(logits, labels);
    const auto preds = argmax_rows(logits);
    for (std::size_t i = 0; i < n; ++i) {
      if (!std::isfinite(losses[i])) throw NonFiniteError("non-finite loss during attack");
      if (preds[i] != labels[i]) out.success[i] = 1;
      if (losses[i] > out.loss[i]) {
        out.loss[i] = losses[i];
        std::copy_n(delta.data().begin() + i * row, row, out.delta.data().begin() + i * row);
      }
    }
  }
  return out;
}

}  // namespace fastadv

#endif  // FASTADV_ATTACK_ATTACK_HPP
