#ifndef FASTADV_IO_RUNNER_HPP
#define FASTADV_IO_RUNNER_HPP

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fastadv/data/dataset.hpp"
#include "fastadv/data/synthetic.hpp"
#include "fastadv/eval/diagnostics.hpp"
#include "fastadv/eval/evaluate.hpp"
#include "fastadv/io/checkpoint.hpp"
#include "fastadv/io/config.hpp"
#include "fastadv/io/report.hpp"
#include "fastadv/nn/model.hpp"
#include "fastadv/train/trainer.hpp"

namespace fastadv {

/// Environment variable that overrides dataset.root.
inline constexpr const char* kDataRootEnv = "FASTADV_DATA_ROOT";

inline std::filesystem::path data_root(const ExperimentConfig& cfg) {
  if (const char* env = std::getenv(kDataRootEnv); env && *env) return env;
  return cfg.dataset.root;
}

template <typename T>
struct DataSplits {
  Dataset<T> train;
  Dataset<T> test;
};

/// Train split (capped at dataset.train_subset) and the full test split.
/// Synthetic data draws both splits from one sample so they share w.
template <typename T>
DataSplits<T> load_datasets(const ExperimentConfig& cfg) {
  DataSplits<T> d;
  if (cfg.dataset.kind == "synthetic") {
    const auto& s = cfg.dataset.synthetic;
    Rng rng = make_rng(cfg.seed, {stream::data});
    const auto all = synthetic_margin_dataset<T>(s.n_train + s.n_test, s.dim, s.margin, s.eps_max, rng).data;
    d.train = rows(all, 0, s.n_train);
    d.test = rows(all, s.n_train, s.n_train + s.n_test);
    d.test.split = Split::test;
  } else {
    const auto root = data_root(cfg);
    d.train = load_mnist<T>(root, Split::train);
    d.test = load_mnist<T>(root, Split::test);
  }
  d.train = take(d.train, cfg.dataset.train_subset);
  return d;
}

template <typename T>
Architecture architecture_for(const ExperimentConfig& cfg, const Dataset<T>& data) {
  if (cfg.model == "mnist_cnn") return mnist_cnn_architecture();
  return linear_architecture(data.example_shape(), data.num_classes);
}

/// Freshly initialized model; parameters depend only on (seed, architecture).
template <typename T>
Model<T> make_model(const ExperimentConfig& cfg, const Dataset<T>& data, std::uint64_t seed) {
  Model<T> m(architecture_for(cfg, data));
  Rng rng = make_rng(seed, {stream::init});
  init_parameters(m, rng);
  return m;
}

inline EvalOptions eval_options(const ExperimentConfig& cfg) { return {cfg.eval.subset, cfg.eval.batch_size}; }

inline std::filesystem::path prepare_out(const ExperimentConfig& cfg) {
  std::filesystem::path out = cfg.out;
  std::filesystem::create_directories(out);
  return out;
}

// ---------------------------------------------------------------------------
// train

template <typename T>
struct TrainOutput {
  TrainResult<T> result;
  EvalReport report;
};

/// Trains, evaluates the returned model on the test split, and writes
/// metrics.csv, steps.csv, curves.csv, summary.json, final.ckpt and
/// best.ckpt into cfg.out.
template <typename T>
TrainOutput<T> run_train(const ExperimentConfig& cfg, std::ostream* log = nullptr) {
  cfg.validate();
  const auto config = to_json(cfg);
  const auto data = load_datasets<T>(cfg);
  const auto out = prepare_out(cfg);
  EpochCallback cb;
  if (log) {
    cb = [log](const EpochRow& r) {
      *log << "epoch " << r.epoch << " lr " << format_number(r.lr) << " loss " << format_number(r.train_loss)
           << " clean " << r.clean_acc << " fgsm " << r.fgsm_acc << " pgd " << r.probe_pgd_acc << std::endl;
    };
  }
  TrainOutput<T> o{train(cfg.train, make_model(cfg, data.train, cfg.seed), data.train, cb), {}};
  const auto& rec = o.result.record;
  write_text(out / "metrics.csv", metrics_csv(rec, config, cfg.record_wall_time));
  write_text(out / "steps.csv", steps_csv(rec, config));
  write_text(out / "curves.csv", curves_csv(extract_learning_curves(rec), config));
  const int last = rec.rows.back().epoch;
  save_checkpoint(make_checkpoint(o.result.final_model, {{"kind", "final"}, {"epoch", last}, {"config", config}}),
                  out / "final.ckpt");
  save_checkpoint(make_checkpoint(o.result.best_model, {{"kind", "best"}, {"epoch", rec.best_epoch}, {"config", config}}),
                  out / "best.ckpt");
  o.report = evaluate(o.result.model, data.test, cfg.eval.suite, cfg.seed, eval_options(cfg));
  nlohmann::ordered_json summary{{"config", config},
                                 {"record", record_json(rec)},
                                 {"evaluated", rec.early_stop_epoch ? "best" : "final"},
                                 {"eval", report_json(o.report)}};
  write_text(out / "summary.json", summary.dump(2) + "\n");
  if (log) {
    *log << "clean " << o.report.clean_accuracy() << " robust " << o.report.robust_accuracy() << " on "
         << o.report.examples << " test examples" << std::endl;
  }
  return o;
}

// ---------------------------------------------------------------------------
// eval / diagnose

template <typename T>
Model<T> load_model(const ExperimentConfig& cfg, const Dataset<T>& like, const std::filesystem::path& checkpoint) {
  Model<T> m(architecture_for(cfg, like));
  restore(load_checkpoint(checkpoint), m);
  return m;
}

/// Evaluates a checkpoint with the configured suite; writes eval.json.
template <typename T>
EvalReport run_eval(const ExperimentConfig& cfg, const std::filesystem::path& checkpoint) {
  cfg.validate();
  const auto data = load_datasets<T>(cfg);
  const Model<T> model = load_model(cfg, data.test, checkpoint);
  const auto report = evaluate(model, data.test, cfg.eval.suite, cfg.seed, eval_options(cfg));
  const auto out = prepare_out(cfg);
  nlohmann::ordered_json j{{"config", to_json(cfg)}, {"checkpoint", checkpoint.string()}, {"eval", report_json(report)}};
  write_text(out / "eval.json", j.dump(2) + "\n");
  return report;
}

/// Histogram of final PGD perturbation coordinates; writes histogram.csv.
template <typename T>
Histogram run_diagnose(const ExperimentConfig& cfg, const std::filesystem::path& checkpoint) {
  cfg.validate();
  const auto data = load_datasets<T>(cfg);
  const Model<T> model = load_model(cfg, data.test, checkpoint);
  const auto subset = take(data.test, cfg.diagnose.subset);
  const auto h = perturbation_histogram(model, subset, cfg.diagnose.attack, cfg.diagnose.bins, cfg.seed,
                                        cfg.eval.batch_size);
  write_text(prepare_out(cfg) / "histogram.csv", histogram_csv(h, to_json(cfg)));
  return h;
}

// ---------------------------------------------------------------------------
// lr-find

struct LrTrial {
  double lr = 0;
  bool diverged = false;
  double initial_loss = 0;
  double max_loss = 0;
  double final_loss = 0;
};

/// A run diverges if any update loss is non-finite or reaches
/// factor * (loss of the first update).
inline LrTrial judge_lr_trial(double lr, const std::vector<double>& losses, double factor) {
  LrTrial t;
  t.lr = lr;
  if (losses.empty()) {
    t.diverged = true;
    t.initial_loss = t.max_loss = t.final_loss = NAN;
    return t;
  }
  t.initial_loss = losses.front();
  t.final_loss = losses.back();
  t.max_loss = losses.front();
  for (double l : losses) {
    if (!std::isfinite(l)) {
      t.diverged = true;
      t.max_loss = l;
      break;
    }
    t.max_loss = std::max(t.max_loss, l);
  }
  if (!std::isfinite(t.initial_loss) || !(t.max_loss < factor * t.initial_loss)) t.diverged = true;
  return t;
}

/// Largest learning rate whose trial did not diverge.
inline std::optional<double> select_learning_rate(const std::vector<LrTrial>& trials) {
  std::optional<double> best;
  for (const auto& t : trials) {
    if (!t.diverged && (!best || t.lr > *best)) best = t.lr;
  }
  return best;
}

inline std::string lrfind_csv(const std::vector<LrTrial>& trials, std::optional<double> chosen,
                              const nlohmann::ordered_json& config) {
  std::string s = csv_preamble("fastadv lrfind v1", config);
  s += "# selected: " + (chosen ? format_number(*chosen) : std::string("none")) + "\n";
  s += "lr,diverged,initial_loss,max_loss,final_loss\n";
  for (const auto& t : trials) {
    s += format_number(t.lr) + ',' + (t.diverged ? "1" : "0") + ',' + format_number(t.initial_loss) + ',' +
         format_number(t.max_loss) + ',' + format_number(t.final_loss) + '\n';
  }
  return s;
}

/// Short trainings over the lr grid; writes lrfind.csv.
template <typename T>
std::pair<std::vector<LrTrial>, std::optional<double>> run_lr_find(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto data = load_datasets<T>(cfg);
  const auto subset = take(data.train, cfg.lr_find.train_subset);
  std::vector<LrTrial> trials;
  for (double lr : cfg.lr_find.grid) {
    TrainSpec spec = cfg.train;
    spec.max_lr = lr;
    spec.epochs = cfg.lr_find.epochs;
    spec.early_stop = false;
    std::vector<double> losses;
    try {
      const auto r = train(spec, make_model(cfg, subset, cfg.seed), subset);
      for (const auto& s : r.record.steps) losses.push_back(s.loss);
    } catch (const DivergenceError&) {
      losses.push_back(NAN);
    }
    trials.push_back(judge_lr_trial(lr, losses, cfg.lr_find.divergence_factor));
  }
  const auto chosen = select_learning_rate(trials);
  write_text(prepare_out(cfg) / "lrfind.csv", lrfind_csv(trials, chosen, to_json(cfg)));
  return {trials, chosen};
}

// ---------------------------------------------------------------------------
// sweep

/// FGSM step-size sweep over sweep.alphas x sweep.seeds; writes sweep.csv
/// and sweep_cells.csv.
template <typename T>
SweepResult run_sweep(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto data = load_datasets<T>(cfg);
  const std::function<Model<T>(std::uint64_t)> factory = [&](std::uint64_t seed) {
    return make_model(cfg, data.train, seed);
  };
  const auto result = stepsize_sweep<T>(cfg.train, cfg.sweep.alphas, cfg.sweep.seeds, factory, data.train, data.test,
                                        cfg.eval.suite, eval_options(cfg));
  const auto out = prepare_out(cfg);
  const auto config = to_json(cfg);
  write_text(out / "sweep.csv", sweep_csv(result, config));
  write_text(out / "sweep_cells.csv", sweep_cells_csv(result, config));
  return result;
}

}  // namespace fastadv

#endif  // FASTADV_IO_RUNNER_HPP
