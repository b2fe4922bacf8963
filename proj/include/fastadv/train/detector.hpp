#ifndef FASTADV_TRAIN_DETECTOR_HPP
#define FASTADV_TRAIN_DETECTOR_HPP

#include <cstddef>
#include <optional>
#include <vector>

#include "fastadv/attack/attack.hpp"
#include "fastadv/core/rng.hpp"
#include "fastadv/data/dataset.hpp"
#include "fastadv/nn/model.hpp"

namespace fastadv {

/// Probe adversary and trigger rule for catastrophic-overfitting detection.
/// Accuracies are fractions in [0, 1].
struct DetectorSpec {
  int pgd_steps = 5;
  int restarts = 1;
  double alpha = 0.0;  // 0 means epsilon / 4
  std::size_t probe_batch = 0;
  double floor = 0.20;
  double margin = 0.50;

  double step_size(double epsilon) const { return alpha > 0.0 ? alpha : epsilon / 4.0; }

  void validate() const {
    if (pgd_steps < 1) throw ConfigError("detector pgd_steps must be >= 1");
    if (restarts < 1) throw ConfigError("detector restarts must be >= 1");
    if (alpha < 0.0) throw ConfigError("detector alpha must be >= 0");
    if (floor < 0.0 || margin < 0.0) throw ConfigError("detector thresholds must be >= 0");
  }

  friend bool operator==(const DetectorSpec&, const DetectorSpec&) = default;
};

/// Fires when probe accuracy falls below `floor`, or more than `margin`
/// below the best accuracy seen at earlier epochs.
class OverfitDetector {
 public:
  OverfitDetector(double floor, double margin) : floor_(floor), margin_(margin) {}

  bool observe(double accuracy) {
    const bool fired = accuracy < floor_ || (peak_ && *peak_ - accuracy > margin_);
    if (!peak_ || accuracy > *peak_) peak_ = accuracy;
    return fired;
  }

  std::optional<double> peak() const noexcept { return peak_; }

 private:
  double floor_;
  double margin_;
  std::optional<double> peak_;
};

/// 1-based epoch at which the rule first fires on a probe-accuracy history.
inline std::optional<std::size_t> first_trigger(const std::vector<double>& history, double floor, double margin) {
  OverfitDetector d(floor, margin);
  for (std::size_t i = 0; i < history.size(); ++i) {
    if (d.observe(history[i])) return i + 1;
  }
  return std::nullopt;
}

struct ProbeAccuracy {
  double clean = 0;
  double fgsm = 0;
  double pgd = 0;
};

/// Clean, FGSM and probe-PGD accuracy on one fixed batch. An example counts
/// under an attack only if it is also classified correctly when clean.
template <typename T>
ProbeAccuracy probe_accuracy(const Model<T>& model, const Batch<T>& probe, const AttackSpec& train_attack,
                             const DetectorSpec& detector, Rng& rng) {
  const auto clean = argmax_rows(model.logits(probe.images));
  const auto fg = pgd_attack(model, probe.images, probe.labels, fgsm_spec(train_attack.epsilon, train_attack.clamp_image), rng);
  AttackSpec pgd{train_attack.epsilon, detector.step_size(train_attack.epsilon), detector.pgd_steps,
                 detector.restarts, InitKind::uniform, train_attack.clamp_image};
  const auto pg = pgd_attack(model, probe.images, probe.labels, pgd, rng);
  std::size_t c = 0, f = 0, p = 0;
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const bool ok = clean[i] == probe.labels[i];
    c += ok;
    f += ok && !fg.success[i];
    p += ok && !pg.success[i];
  }
  const double n = static_cast<double>(probe.size());
  return {c / n, f / n, p / n};
}

struct DetectorDecision {
  ProbeAccuracy accuracy;
  bool triggered = false;
};

/// Probes the model and feeds the PGD accuracy to the running detector.
template <typename T>
DetectorDecision detect_catastrophic_overfitting(const Model<T>& model, const Batch<T>& probe,
                                                 const AttackSpec& train_attack, const DetectorSpec& spec,
                                                 OverfitDetector& state, Rng& rng) {
  DetectorDecision d;
  d.accuracy = probe_accuracy(model, probe, train_attack, spec, rng);
  d.triggered = state.observe(d.accuracy.pgd);
  return d;
}

}  // namespace fastadv

#endif  // FASTADV_TRAIN_DETECTOR_HPP
