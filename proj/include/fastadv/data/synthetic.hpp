#ifndef FASTADV_DATA_SYNTHETIC_HPP
#define FASTADV_DATA_SYNTHETIC_HPP

#include <cmath>
#include <random>
#include <stdexcept>
#include <vector>

#include "fastadv/core/rng.hpp"
#include "fastadv/data/dataset.hpp"
#include "fastadv/nn/model.hpp"

namespace fastadv {

template <typename T>
struct MarginData {
  Dataset<T> data;
  std::vector<double> w;  // separating direction; class 1 iff w.x > 0
  double margin = 0;
};

/// Two-class data with |w.x| >= margin * ||w||_1 for every point, so no
/// l_inf perturbation of size < margin can flip sign(w.x).
///
/// Each point is a component orthogonal to w plus t * y * sign(w), with
/// t in [1.05, 2] * margin.
template <typename T>
MarginData<T> synthetic_margin_dataset(std::size_t n, std::size_t d, double margin, double eps_max, Rng& rng) {
  if (!(eps_max >= 0.0) || !(margin > eps_max)) {
    throw std::invalid_argument("synthetic_margin_dataset: need margin > eps_max >= 0");
  }
  if (n == 0 || d == 0) throw std::invalid_argument("synthetic_margin_dataset: empty shape");
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  MarginData<T> out;
  out.margin = margin;
  out.w.resize(d);
  for (auto& wj : out.w) {
    do {
      wj = normal(rng);
    } while (std::abs(wj) < 0.05);
  }
  double w_sq = 0, w_l1 = 0;
  for (double wj : out.w) {
    w_sq += wj * wj;
    w_l1 += std::abs(wj);
  }
  std::vector<T> values(n * d);
  std::vector<int> labels(n);
  std::vector<double> z(d);
  for (std::size_t i = 0; i < n; ++i) {
    const int y = unit(rng) < 0.5 ? -1 : 1;
    const double t = margin * (1.05 + 0.95 * unit(rng));
    double wz = 0;
    for (std::size_t j = 0; j < d; ++j) {
      z[j] = normal(rng);
      wz += out.w[j] * z[j];
    }
    double score = 0;
    for (std::size_t j = 0; j < d; ++j) {
      const double orth = z[j] - wz / w_sq * out.w[j];
      const double x = orth + y * t * (out.w[j] > 0 ? 1.0 : -1.0);
      values[i * d + j] = static_cast<T>(x);
      score += out.w[j] * static_cast<double>(values[i * d + j]);
    }
    if (std::abs(score) < margin * w_l1 || (score > 0) != (y > 0)) {
      throw std::logic_error("synthetic_margin_dataset: margin construction violated");
    }
    labels[i] = y > 0 ? 1 : 0;
  }
  out.data.images = Tensor<T>({n, d}, std::move(values));
  out.data.labels = std::move(labels);
  out.data.num_classes = 2;
  out.data.split = Split::train;
  return out;
}

/// Linear model whose logit margin (class 1 minus class 0) is scale * w.x.
template <typename T>
Model<T> oracle_linear_model(const std::vector<double>& w, double scale) {
  Model<T> m = build_linear<T>(w.size(), 2);
  auto& weight = m.parameter("fc1.weight").value;  // [d, 2]
  for (std::size_t j = 0; j < w.size(); ++j) {
    weight[j * 2 + 0] = static_cast<T>(-0.5 * scale * w[j]);
    weight[j * 2 + 1] = static_cast<T>(0.5 * scale * w[j]);
  }
  return m;
}

}  // namespace fastadv

#endif  // FASTADV_DATA_SYNTHETIC_HPP
