#ifndef FASTADV_TRAIN_SGD_HPP
#define FASTADV_TRAIN_SGD_HPP

#include <cmath>
#include <vector>

#include "fastadv/core/error.hpp"
#include "fastadv/nn/model.hpp"

namespace fastadv {

/// Momentum SGD with coupled weight decay:
///   v <- momentum * v + (grad + weight_decay * param)
///   param <- param - lr * v
/// Velocity buffers start at zero. A step that would produce a non-finite
/// value throws before anything is modified.
template <typename T>
class Sgd {
 public:
  Sgd(double momentum, double weight_decay) : momentum_(momentum), weight_decay_(weight_decay) {}

  void step(std::vector<Parameter<T>>& params, const std::vector<std::vector<T>>& grads, double lr) {
    if (grads.size() != params.size()) throw ShapeError("sgd: gradient count does not match parameters");
    if (velocity_.empty()) {
      for (const auto& p : params) velocity_.emplace_back(p.value.size(), T{0});
    }
    const T mu = static_cast<T>(momentum_);
    const T wd = static_cast<T>(weight_decay_);
    const T rate = static_cast<T>(lr);
    std::vector<std::vector<T>> next_v(params.size());
    std::vector<std::vector<T>> next_p(params.size());
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto p = params[k].value.data();
      const auto& g = grads[k];
      if (g.size() != p.size() || velocity_[k].size() != p.size()) {
        throw ShapeError("sgd: gradient shape mismatch for " + params[k].name);
      }
      next_v[k].resize(p.size());
      next_p[k].resize(p.size());
      for (std::size_t i = 0; i < p.size(); ++i) {
        const T v = mu * velocity_[k][i] + (g[i] + wd * p[i]);
        const T np = p[i] - rate * v;
        if (!std::isfinite(v) || !std::isfinite(np)) {
          throw NonFiniteError("sgd: non-finite update for " + params[k].name);
        }
        next_v[k][i] = v;
        next_p[k][i] = np;
      }
    }
    for (std::size_t k = 0; k < params.size(); ++k) {
      velocity_[k] = std::move(next_v[k]);
      std::copy(next_p[k].begin(), next_p[k].end(), params[k].value.data().begin());
    }
  }

  const std::vector<std::vector<T>>& velocity() const noexcept { return velocity_; }

 private:
  double momentum_;
  double weight_decay_;
  std::vector<std::vector<T>> velocity_;
};

}  // namespace fastadv

#endif  // FASTADV_TRAIN_SGD_HPP
