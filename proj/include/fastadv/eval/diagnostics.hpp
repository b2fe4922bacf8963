#ifndef FASTADV_EVAL_DIAGNOSTICS_HPP
#define FASTADV_EVAL_DIAGNOSTICS_HPP

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "fastadv/attack/attack.hpp"
#include "fastadv/eval/evaluate.hpp"
#include "fastadv/train/trainer.hpp"

namespace fastadv {

// ---------------------------------------------------------------------------
// Perturbation histograms

/// Equal-width bins over [-epsilon, epsilon]; bins is odd so that zero falls
/// in the central bin.
struct Histogram {
  double epsilon = 0;
  std::vector<std::size_t> counts;

  std::size_t bins() const noexcept { return counts.size(); }
  double lower(std::size_t i) const { return -epsilon + 2.0 * epsilon * static_cast<double>(i) / bins(); }
  double upper(std::size_t i) const { return lower(i + 1); }

  std::size_t total() const {
    std::size_t n = 0;
    for (auto c : counts) n += c;
    return n;
  }

  /// Share of mass in the outermost bin on each side.
  double boundary_fraction() const {
    const std::size_t n = total();
    return n ? static_cast<double>(counts.front() + counts.back()) / static_cast<double>(n) : 0.0;
  }

  void add(double v) {
    const double width = 2.0 * epsilon / static_cast<double>(bins());
    double pos = std::floor((v + epsilon) / width);
    pos = std::max(0.0, std::min(pos, static_cast<double>(bins() - 1)));
    ++counts[static_cast<std::size_t>(pos)];
  }
};

inline Histogram make_histogram(double epsilon, std::size_t bins) {
  if (bins < 3 || bins % 2 == 0) throw std::invalid_argument("histogram needs an odd bin count >= 3");
  if (!(epsilon > 0.0)) throw std::invalid_argument("histogram needs epsilon > 0");
  return Histogram{epsilon, std::vector<std::size_t>(bins, 0)};
}

/// Counts every coordinate of the final PGD perturbation over the subset.
template <typename T>
Histogram perturbation_histogram(const Model<T>& model, const Dataset<T>& subset, const AttackSpec& spec,
                                 std::size_t bins, std::uint64_t seed, std::size_t batch_size = 500) {
  Histogram h = make_histogram(spec.epsilon, bins);
  std::size_t b = 0;
  for (std::size_t start = 0; start < subset.size(); start += batch_size, ++b) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(subset.size(), start + batch_size); ++i) idx.push_back(i);
    const Batch<T> batch = gather(subset, idx, b);
    Rng rng = make_rng(seed, {stream::eval, b, 0});
    const auto res = pgd_attack(model, batch.images, batch.labels, spec, rng);
    for (T v : res.delta.data()) h.add(static_cast<double>(v));
  }
  return h;
}

// ---------------------------------------------------------------------------
// Learning curves

struct CurvePoint {
  int epoch = 0;
  double train_loss = 0;
  double fgsm_error = 0;
  double pgd_error = 0;
};

inline std::vector<CurvePoint> extract_learning_curves(const RunRecord& rec) {
  std::vector<CurvePoint> out;
  out.reserve(rec.rows.size());
  for (const auto& r : rec.rows) out.push_back({r.epoch, r.train_loss, 1.0 - r.fgsm_acc, 1.0 - r.probe_pgd_acc});
  return out;
}

struct CollapseAnalysis {
  bool collapsed = false;
  int collapse_epoch = 0;  // first epoch with PGD error >= 0.95
  int onset_epoch = 0;     // last earlier epoch with PGD error < 0.5 (0 = before training)
  bool fgsm_error_dropped = false;
  bool sudden = false;  // jump spans at most two epochs
};

/// Looks for the catastrophic-overfitting signature: probe-PGD error
/// jumping to ~100% within two epochs while FGSM error goes down.
inline CollapseAnalysis analyze_collapse(const std::vector<CurvePoint>& curve) {
  CollapseAnalysis a;
  for (std::size_t i = 0; i < curve.size(); ++i) {
    if (curve[i].pgd_error < 0.95) continue;
    a.collapsed = true;
    a.collapse_epoch = curve[i].epoch;
    double onset_fgsm = 1.0;
    for (std::size_t j = i; j-- > 0;) {
      if (curve[j].pgd_error < 0.5) {
        a.onset_epoch = curve[j].epoch;
        onset_fgsm = curve[j].fgsm_error;
        break;
      }
    }
    a.sudden = a.collapse_epoch - a.onset_epoch <= 2;
    a.fgsm_error_dropped = curve[i].fgsm_error < onset_fgsm;
    break;
  }
  return a;
}

// ---------------------------------------------------------------------------
// Step-size sweep

struct SweepCell {
  double alpha = 0;
  std::uint64_t seed = 0;
  std::optional<double> robust_accuracy;
  std::optional<double> clean_accuracy;
  std::optional<int> early_stop_epoch;
  std::string error;  // empty unless the cell failed
};

struct SweepRow {
  double alpha = 0;
  double mean = 0;
  double std_error = 0;
  std::size_t completed = 0;
  std::size_t failed = 0;
};

struct SweepResult {
  std::vector<SweepCell> cells;
  std::vector<SweepRow> rows;
};

/// Trains one model per (alpha, seed) from `base`, evaluates each with the
/// suite, and reports mean and standard error per alpha. A failing cell is
/// recorded and the sweep carries on.
template <typename T>
SweepResult stepsize_sweep(const TrainSpec& base, const std::vector<double>& alphas,
                           const std::vector<std::uint64_t>& seeds,
                           const std::function<Model<T>(std::uint64_t)>& make_model, const Dataset<T>& train_data,
                           const Dataset<T>& test_data, const std::vector<NamedAttack>& suite, EvalOptions opt = {}) {
  for (double a : alphas) {
    if (!(a > 0.0)) throw std::invalid_argument("step sizes must be positive");
  }
  SweepResult out;
  for (double alpha : alphas) {
    SweepRow row;
    row.alpha = alpha;
    std::vector<double> values;
    for (std::uint64_t seed : seeds) {
      SweepCell cell;
      cell.alpha = alpha;
      cell.seed = seed;
      try {
        TrainSpec spec = base;
        spec.attack.alpha = alpha;
        spec.seed = seed;
        auto trained = train(spec, make_model(seed), train_data);
        const auto rep = evaluate(trained.model, test_data, suite, seed, opt);
        cell.robust_accuracy = rep.robust_accuracy();
        cell.clean_accuracy = rep.clean_accuracy();
        cell.early_stop_epoch = trained.record.early_stop_epoch;
        values.push_back(rep.robust_accuracy());
      } catch (const std::exception& e) {
        cell.error = e.what();
        ++row.failed;
      }
      out.cells.push_back(cell);
    }
    row.completed = values.size();
    if (!values.empty()) {
      double s = 0;
      for (double v : values) s += v;
      row.mean = s / static_cast<double>(values.size());
      if (values.size() > 1) {
        double ss = 0;
        for (double v : values) ss += (v - row.mean) * (v - row.mean);
        row.std_error = std::sqrt(ss / static_cast<double>(values.size() - 1)) / std::sqrt(static_cast<double>(values.size()));
      }
    }
    out.rows.push_back(row);
  }
  return out;
}

}  // namespace fastadv

#endif  // FASTADV_EVAL_DIAGNOSTICS_HPP
