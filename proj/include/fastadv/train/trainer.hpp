#ifndef FASTADV_TRAIN_TRAINER_HPP
#define FASTADV_TRAIN_TRAINER_HPP

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fastadv/attack/attack.hpp"
#include "fastadv/core/error.hpp"
#include "fastadv/core/rng.hpp"
#include "fastadv/data/dataset.hpp"
#include "fastadv/nn/model.hpp"
#include "fastadv/train/detector.hpp"
#include "fastadv/train/schedule.hpp"
#include "fastadv/train/sgd.hpp"

namespace fastadv {

enum class Method { standard, fgsm, pgd, free };

inline std::string to_string(Method m) {
  switch (m) {
    case Method::standard: return "standard";
    case Method::fgsm: return "fgsm";
    case Method::pgd: return "pgd";
    case Method::free: return "free";
  }
  return "?";
}

inline Method parse_method(std::string_view s) {
  for (Method m : {Method::standard, Method::fgsm, Method::pgd, Method::free}) {
    if (s == to_string(m)) return m;
  }
  throw ConfigError("unknown training method '" + std::string(s) + "'");
}

struct TrainSpec {
  Method method = Method::fgsm;
  int epochs = 10;
  std::size_t batch_size = 100;
  double max_lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  AttackSpec attack{0.3, 0.3, 1, 1, InitKind::uniform, true};
  int replay = 1;  // minibatch replays, free training only
  bool early_stop = false;
  DetectorSpec detector;  // probe metrics are logged every epoch either way
  bool shuffle = true;
  std::uint64_t seed = 0;

  /// Outer passes over the data; free training divides the budget by replay.
  int passes() const { return method == Method::free ? std::max(1, epochs / replay) : epochs; }

  /// Length of the learning-rate cycle in epoch-equivalents.
  double horizon() const { return method == Method::free ? static_cast<double>(passes() * replay) : epochs; }

  void validate() const {
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(max_lr >= 0.0)) throw ConfigError("max_lr must be >= 0");
    if (momentum < 0.0 || weight_decay < 0.0) throw ConfigError("momentum and weight_decay must be >= 0");
    if (method == Method::free && replay < 1) throw ConfigError("free training needs replay >= 1");
    if (method == Method::fgsm && attack.steps != 1) throw ConfigError("fgsm training uses exactly one attack step");
    if (method == Method::pgd && attack.steps < 1) throw ConfigError("pgd training needs at least one attack step");
    if (method == Method::pgd && attack.init == InitKind::previous) {
      throw ConfigError("pgd training supports zero/uniform/hypercube/normal init");
    }
    attack.validate();
    detector.validate();
  }

  friend bool operator==(const TrainSpec&, const TrainSpec&) = default;
};

struct EpochRow {
  int epoch = 0;
  double lr = 0;  // rate used by the epoch's last update
  double train_loss = 0;
  double clean_acc = 0;
  double fgsm_acc = 0;
  double probe_pgd_acc = 0;
  double wall_seconds = 0;
};

/// One model update.
struct StepRecord {
  int epoch = 0;
  std::size_t batch = 0;
  int replay = 0;
  double t = 0;
  double lr = 0;
  double loss = 0;
};

struct RunRecord {
  TrainSpec spec;
  std::vector<EpochRow> rows;
  std::vector<StepRecord> steps;
  std::optional<int> early_stop_epoch;
  int best_epoch = 0;  // 0 = initial parameters
  std::optional<EpochRow> best;
  std::optional<EpochRow> final_row;
  std::size_t minibatches_per_epoch = 0;
  std::size_t gradient_passes = 0;
  std::size_t model_updates = 0;
};

template <typename T>
struct TrainResult {
  Model<T> model;  // best checkpoint if early stopping fired, else the final one
  Model<T> final_model;
  Model<T> best_model;
  RunRecord record;
};

/// Called after each epoch's row is recorded.
using EpochCallback = std::function<void(const EpochRow&)>;

namespace detail {

template <typename T>
class TrainLoop {
 public:
  TrainLoop(const TrainSpec& spec, Model<T> model, const Dataset<T>& data, EpochCallback on_epoch = {})
      : spec_(spec),
        model_(std::move(model)),
        data_(data),
        on_epoch_(std::move(on_epoch)),
        sgd_(spec.momentum, spec.weight_decay),
        shuffle_rng_(make_rng(spec.seed, {stream::shuffle})),
        attack_rng_(make_rng(spec.seed, {stream::attack})) {}

  TrainResult<T> run() {
    spec_.validate();
    RunRecord rec;
    rec.spec = spec_;
    {
      Rng unused;
      const auto plan = batches(data_, spec_.batch_size, false, unused);
      rec.minibatches_per_epoch = plan.size();
      probe_ = plan[std::min(spec_.detector.probe_batch, plan.size() - 1)];
    }
    OverfitDetector detector(spec_.detector.floor, spec_.detector.margin);
    Model<T> best = model_;
    double best_acc = -1.0;
    const auto start = std::chrono::steady_clock::now();
    const int passes = spec_.passes();
    for (int epoch = 1; epoch <= passes; ++epoch) {
      const std::size_t passes_before = backward_pass_counter();
      double loss_sum = 0, lr = 0;
      std::size_t seen = 0;
      try {
        const auto plan = batches(data_, spec_.batch_size, spec_.shuffle, shuffle_rng_);
        for (std::size_t i = 0; i < plan.size(); ++i) {
          const Batch<T> batch = plan[i];
          const int reps = spec_.method == Method::free ? spec_.replay : 1;
          for (int j = 0; j < reps; ++j) {
            const std::size_t u = rec.model_updates;
            const double t = static_cast<double>(u + 1) / static_cast<double>(plan.size());
            lr = cyclic_lr(std::min(t, spec_.horizon()), spec_.horizon(), spec_.max_lr);
            const double loss = update(batch, lr);
            ++rec.model_updates;
            rec.steps.push_back({epoch, i, j, t, lr, loss});
            if (j + 1 == reps) {
              loss_sum += loss * static_cast<double>(batch.size());
              seen += batch.size();
            }
          }
        }
      } catch (const NonFiniteError& e) {
        throw DivergenceError(epoch, "training diverged in epoch " + std::to_string(epoch) + ": " + e.what());
      }
      rec.gradient_passes += backward_pass_counter() - passes_before;

      Rng probe_rng = make_rng(spec_.seed, {stream::probe, static_cast<std::uint64_t>(epoch)});
      const auto decision =
          detect_catastrophic_overfitting(model_, probe_, spec_.attack, spec_.detector, detector, probe_rng);
      EpochRow row{epoch,
                   lr,
                   loss_sum / static_cast<double>(seen),
                   decision.accuracy.clean,
                   decision.accuracy.fgsm,
                   decision.accuracy.pgd,
                   std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count()};
      rec.rows.push_back(row);
      if (on_epoch_) on_epoch_(row);
      if (spec_.early_stop && decision.triggered) {
        rec.early_stop_epoch = epoch;
        break;
      }
      if (row.probe_pgd_acc > best_acc) {
        best_acc = row.probe_pgd_acc;
        best = model_;
        rec.best_epoch = epoch;
        rec.best = row;
      }
    }
    rec.final_row = rec.rows.back();
    TrainResult<T> out;
    out.final_model = model_;
    out.best_model = best;
    out.model = rec.early_stop_epoch ? best : model_;
    out.record = std::move(rec);
    return out;
  }

 private:
  // One model update (plus the attack that precedes it); returns the loss
  // the update descended on.
  double update(const Batch<T>& batch, double lr) {
    switch (spec_.method) {
      case Method::standard:
        return descend(batch.images, batch.labels, lr);
      case Method::fgsm: {
        Tensor<T> delta = start_delta(spec_.attack, batch.images, attack_rng_, carried());
        delta = fgsm_step(model_, batch.images, batch.labels, std::move(delta), spec_.attack.alpha,
                          spec_.attack.epsilon, spec_.attack.clamp_image);
        carried_ = delta;
        return descend(plus(batch.images, delta), batch.labels, lr);
      }
      case Method::pgd: {
        Tensor<T> delta = start_delta(spec_.attack, batch.images, attack_rng_);
        for (int s = 0; s < spec_.attack.steps; ++s) {
          delta = fgsm_step(model_, batch.images, batch.labels, std::move(delta), spec_.attack.alpha,
                            spec_.attack.epsilon, spec_.attack.clamp_image);
        }
        return descend(plus(batch.images, delta), batch.labels, lr);
      }
      case Method::free:
        return free_replay(batch, lr);
    }
    return 0;
  }

  const Tensor<T>* carried() {
    if (spec_.attack.init != InitKind::previous) return nullptr;
    if (carried_.empty()) {
      Shape s = data_.images.shape();
      s[0] = spec_.batch_size;
      carried_ = Tensor<T>(s);
    }
    return &carried_;
  }

  double descend(const Tensor<T>& inputs, const std::vector<int>& labels, double lr) {
    Tape<T> tape;
    const auto f = model_.forward(tape, tape.leaf(inputs, false), true);
    const Var loss = tape.softmax_cross_entropy(f.logits, labels);
    tape.backward(loss);
    std::vector<std::vector<T>> grads;
    grads.reserve(f.params.size());
    for (Var p : f.params) grads.push_back(tape.grad(p));
    sgd_.step(model_.parameters(), grads, lr);
    return static_cast<double>(tape.value(loss).item());
  }

  // Shared backward pass for delta and theta; delta persists across
  // minibatches, and a short final batch uses its leading rows.
  double free_replay(const Batch<T>& batch, double lr) {
    if (delta_.empty()) {
      Shape s = data_.images.shape();
      s[0] = spec_.batch_size;
      delta_ = Tensor<T>(s);
    }
    const std::size_t n = batch.size();
    Tensor<T> delta = n == delta_.dim(0) ? delta_ : delta_.slice_rows(0, n);
    Tape<T> tape;
    const Var xv = tape.leaf(batch.images, false);
    const Var dv = tape.leaf(delta, true);
    const auto f = model_.forward(tape, tape.add(xv, dv), true);
    const Var loss = tape.softmax_cross_entropy(f.logits, batch.labels);
    tape.backward(loss);
    std::vector<std::vector<T>> grads;
    for (Var p : f.params) grads.push_back(tape.grad(p));
    delta = signed_step(batch.images, std::move(delta), tape.grad_tensor(dv), spec_.attack.epsilon,
                        spec_.attack.epsilon, spec_.attack.clamp_image);
    std::copy(delta.data().begin(), delta.data().end(), delta_.data().begin());
    sgd_.step(model_.parameters(), grads, lr);
    return static_cast<double>(tape.value(loss).item());
  }

  TrainSpec spec_;
  Model<T> model_;
  const Dataset<T>& data_;
  EpochCallback on_epoch_;
  Sgd<T> sgd_;
  Rng shuffle_rng_;
  Rng attack_rng_;
  Batch<T> probe_;
  Tensor<T> carried_;
  Tensor<T> delta_;
};

}  // namespace detail

/// Runs the training method named in spec.method.
template <typename T>
TrainResult<T> train(const TrainSpec& spec, Model<T> model, const Dataset<T>& data, EpochCallback on_epoch = {}) {
  return detail::TrainLoop<T>(spec, std::move(model), data, std::move(on_epoch)).run();
}

namespace detail {
template <typename T>
TrainResult<T> train_as(Method m, TrainSpec spec, Model<T> model, const Dataset<T>& data) {
  if (spec.method != m) {
    throw ConfigError("spec names method '" + to_string(spec.method) + "' but '" + to_string(m) + "' was requested");
  }
  return train(spec, std::move(model), data);
}
}  // namespace detail

template <typename T>
TrainResult<T> train_standard(const TrainSpec& spec, Model<T> model, const Dataset<T>& data) {
  return detail::train_as(Method::standard, spec, std::move(model), data);
}

template <typename T>
TrainResult<T> train_fgsm(const TrainSpec& spec, Model<T> model, const Dataset<T>& data) {
  return detail::train_as(Method::fgsm, spec, std::move(model), data);
}

template <typename T>
TrainResult<T> train_pgd(const TrainSpec& spec, Model<T> model, const Dataset<T>& data) {
  return detail::train_as(Method::pgd, spec, std::move(model), data);
}

template <typename T>
TrainResult<T> train_free(const TrainSpec& spec, Model<T> model, const Dataset<T>& data) {
  return detail::train_as(Method::free, spec, std::move(model), data);
}

}  // namespace fastadv

#endif  // FASTADV_TRAIN_TRAINER_HPP
