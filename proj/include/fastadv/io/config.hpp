#ifndef FASTADV_IO_CONFIG_HPP
#define FASTADV_IO_CONFIG_HPP

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fastadv/attack/attack.hpp"
#include "fastadv/core/error.hpp"
#include "fastadv/eval/evaluate.hpp"
#include "fastadv/train/trainer.hpp"

namespace fastadv {

using json = nlohmann::ordered_json;

struct SyntheticConfig {
  std::size_t n_train = 512;
  std::size_t n_test = 512;
  std::size_t dim = 20;
  double margin = 0.5;
  double eps_max = 0.25;

  friend bool operator==(const SyntheticConfig&, const SyntheticConfig&) = default;
};

struct DatasetConfig {
  std::string kind = "mnist";  // mnist | synthetic
  std::string root = "data/mnist";
  std::size_t train_subset = 0;  // 0 = all
  SyntheticConfig synthetic;

  friend bool operator==(const DatasetConfig&, const DatasetConfig&) = default;
};

struct EvalConfig {
  std::size_t subset = 1000;
  std::size_t batch_size = 500;
  std::vector<NamedAttack> suite;

  friend bool operator==(const EvalConfig&, const EvalConfig&) = default;
};

struct SweepConfig {
  std::vector<double> alphas;
  std::vector<std::uint64_t> seeds{0, 1, 2};

  friend bool operator==(const SweepConfig&, const SweepConfig&) = default;
};

struct LrFindConfig {
  std::vector<double> grid{0.05, 0.1, 0.2, 0.4};
  int epochs = 1;
  std::size_t train_subset = 0;
  double divergence_factor = 10.0;

  friend bool operator==(const LrFindConfig&, const LrFindConfig&) = default;
};

struct DiagnoseConfig {
  std::size_t bins = 21;
  std::size_t subset = 1000;
  AttackSpec attack{0.3, 0.01, 50, 1, InitKind::uniform, true};

  friend bool operator==(const DiagnoseConfig&, const DiagnoseConfig&) = default;
};

/// Everything a run needs. Serialized as JSON; unknown keys are rejected.
struct ExperimentConfig {
  DatasetConfig dataset;
  std::string model = "mnist_cnn";  // mnist_cnn | linear
  TrainSpec train;
  EvalConfig eval;
  SweepConfig sweep;
  LrFindConfig lr_find;
  DiagnoseConfig diagnose;
  std::string out = "runs/default";
  std::uint64_t seed = 0;
  int precision = 32;
  bool record_wall_time = false;

  void validate() const {
    if (dataset.kind != "mnist" && dataset.kind != "synthetic") {
      throw ConfigError("dataset.kind must be 'mnist' or 'synthetic'");
    }
    if (model != "mnist_cnn" && model != "linear") throw ConfigError("model must be 'mnist_cnn' or 'linear'");
    if (model == "mnist_cnn" && dataset.kind != "mnist") throw ConfigError("mnist_cnn needs the mnist dataset");
    if (precision != 32 && precision != 64) throw ConfigError("precision must be 32 or 64");
    if (eval.suite.empty()) throw ConfigError("eval.suite must not be empty");
    if (eval.batch_size < 1) throw ConfigError("eval.batch_size must be >= 1");
    for (const auto& a : eval.suite) a.spec.validate();
    for (double a : sweep.alphas) {
      if (!(a > 0.0)) throw ConfigError("sweep alphas must be positive");
    }
    if (lr_find.grid.empty() || lr_find.epochs < 1 || !(lr_find.divergence_factor > 1.0)) {
      throw ConfigError("lr_find needs a non-empty grid, epochs >= 1 and divergence_factor > 1");
    }
    if (diagnose.bins < 3 || diagnose.bins % 2 == 0) throw ConfigError("diagnose.bins must be odd and >= 3");
    diagnose.attack.validate();
    if (dataset.kind == "synthetic" && !(dataset.synthetic.margin > dataset.synthetic.eps_max)) {
      throw ConfigError("synthetic margin must exceed eps_max");
    }
    train.validate();
  }

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

namespace detail {

inline void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [k, v] : j.items()) {
    if (!ok.count(k)) throw ConfigError("unknown key '" + k + "' in " + where);
  }
}

template <typename V>
void read(const json& j, const char* key, V& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<V>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("bad value for '" + std::string(key) + "' in " + where);
  }
}

inline json attack_to_json(const AttackSpec& a) {
  return json{{"epsilon", a.epsilon}, {"alpha", a.alpha},   {"steps", a.steps},
              {"restarts", a.restarts}, {"init", to_string(a.init)}, {"clamp_image", a.clamp_image}};
}

inline AttackSpec attack_from_json(const json& j, AttackSpec a, const std::string& where, bool default_clamp) {
  check_keys(j, {"epsilon", "alpha", "steps", "restarts", "init", "clamp_image"}, where);
  read(j, "epsilon", a.epsilon, where);
  read(j, "alpha", a.alpha, where);
  read(j, "steps", a.steps, where);
  read(j, "restarts", a.restarts, where);
  if (j.contains("init")) a.init = parse_init_kind(j.at("init").get<std::string>());
  a.clamp_image = default_clamp;
  read(j, "clamp_image", a.clamp_image, where);
  return a;
}

}  // namespace detail

inline json to_json(const ExperimentConfig& c) {
  json suite = json::array();
  for (const auto& a : c.eval.suite) {
    json e = detail::attack_to_json(a.spec);
    e["name"] = a.name;
    suite.push_back(e);
  }
  const auto& t = c.train;
  return json{
      {"seed", c.seed},
      {"precision", c.precision},
      {"out", c.out},
      {"record_wall_time", c.record_wall_time},
      {"model", c.model},
      {"dataset",
       {{"kind", c.dataset.kind},
        {"root", c.dataset.root},
        {"train_subset", c.dataset.train_subset},
        {"synthetic",
         {{"n_train", c.dataset.synthetic.n_train},
          {"n_test", c.dataset.synthetic.n_test},
          {"dim", c.dataset.synthetic.dim},
          {"margin", c.dataset.synthetic.margin},
          {"eps_max", c.dataset.synthetic.eps_max}}}}},
      {"train",
       {{"method", to_string(t.method)},
        {"epochs", t.epochs},
        {"batch_size", t.batch_size},
        {"max_lr", t.max_lr},
        {"momentum", t.momentum},
        {"weight_decay", t.weight_decay},
        {"replay", t.replay},
        {"shuffle", t.shuffle},
        {"attack", detail::attack_to_json(t.attack)},
        {"early_stop", t.early_stop},
        {"detector",
         {{"pgd_steps", t.detector.pgd_steps},
          {"restarts", t.detector.restarts},
          {"alpha", t.detector.alpha},
          {"probe_batch", t.detector.probe_batch},
          {"floor", t.detector.floor},
          {"margin", t.detector.margin}}}}},
      {"eval", {{"subset", c.eval.subset}, {"batch_size", c.eval.batch_size}, {"suite", suite}}},
      {"sweep", {{"alphas", c.sweep.alphas}, {"seeds", c.sweep.seeds}}},
      {"lr_find",
       {{"grid", c.lr_find.grid},
        {"epochs", c.lr_find.epochs},
        {"train_subset", c.lr_find.train_subset},
        {"divergence_factor", c.lr_find.divergence_factor}}},
      {"diagnose",
       {{"bins", c.diagnose.bins}, {"subset", c.diagnose.subset}, {"attack", detail::attack_to_json(c.diagnose.attack)}}},
  };
}

/// Builds a config from JSON. Missing keys take the documented defaults;
/// clamp_image defaults to on for MNIST and off for synthetic data. An
/// absent eval suite becomes the default PGD + FGSM suite at the training
/// epsilon, and the diagnose attack defaults to single-restart PGD-50 at
/// that epsilon.
inline ExperimentConfig config_from_json(const json& j) {
  using detail::check_keys;
  using detail::read;
  ExperimentConfig c;
  check_keys(j, {"seed", "precision", "out", "record_wall_time", "model", "dataset", "train", "eval", "sweep", "lr_find",
                 "diagnose"},
             "config");
  read(j, "seed", c.seed, "config");
  read(j, "precision", c.precision, "config");
  read(j, "out", c.out, "config");
  read(j, "record_wall_time", c.record_wall_time, "config");
  read(j, "model", c.model, "config");
  if (j.contains("dataset")) {
    const auto& d = j.at("dataset");
    check_keys(d, {"kind", "root", "train_subset", "synthetic"}, "dataset");
    read(d, "kind", c.dataset.kind, "dataset");
    read(d, "root", c.dataset.root, "dataset");
    read(d, "train_subset", c.dataset.train_subset, "dataset");
    if (d.contains("synthetic")) {
      const auto& s = d.at("synthetic");
      check_keys(s, {"n_train", "n_test", "dim", "margin", "eps_max"}, "dataset.synthetic");
      read(s, "n_train", c.dataset.synthetic.n_train, "dataset.synthetic");
      read(s, "n_test", c.dataset.synthetic.n_test, "dataset.synthetic");
      read(s, "dim", c.dataset.synthetic.dim, "dataset.synthetic");
      read(s, "margin", c.dataset.synthetic.margin, "dataset.synthetic");
      read(s, "eps_max", c.dataset.synthetic.eps_max, "dataset.synthetic");
    }
  }
  const bool clamp = c.dataset.kind != "synthetic";
  c.train.attack.clamp_image = clamp;
  if (j.contains("train")) {
    const auto& t = j.at("train");
    check_keys(t, {"method", "epochs", "batch_size", "max_lr", "momentum", "weight_decay", "replay", "shuffle", "attack",
                   "early_stop", "detector"},
               "train");
    if (t.contains("method")) c.train.method = parse_method(t.at("method").get<std::string>());
    read(t, "epochs", c.train.epochs, "train");
    read(t, "batch_size", c.train.batch_size, "train");
    read(t, "max_lr", c.train.max_lr, "train");
    read(t, "momentum", c.train.momentum, "train");
    read(t, "weight_decay", c.train.weight_decay, "train");
    read(t, "replay", c.train.replay, "train");
    read(t, "shuffle", c.train.shuffle, "train");
    read(t, "early_stop", c.train.early_stop, "train");
    if (t.contains("attack")) c.train.attack = detail::attack_from_json(t.at("attack"), c.train.attack, "train.attack", clamp);
    if (t.contains("detector")) {
      const auto& d = t.at("detector");
      check_keys(d, {"pgd_steps", "restarts", "alpha", "probe_batch", "floor", "margin"}, "train.detector");
      read(d, "pgd_steps", c.train.detector.pgd_steps, "train.detector");
      read(d, "restarts", c.train.detector.restarts, "train.detector");
      read(d, "alpha", c.train.detector.alpha, "train.detector");
      read(d, "probe_batch", c.train.detector.probe_batch, "train.detector");
      read(d, "floor", c.train.detector.floor, "train.detector");
      read(d, "margin", c.train.detector.margin, "train.detector");
    }
  }
  c.train.seed = c.seed;
  if (j.contains("eval")) {
    const auto& e = j.at("eval");
    check_keys(e, {"subset", "batch_size", "suite"}, "eval");
    read(e, "subset", c.eval.subset, "eval");
    read(e, "batch_size", c.eval.batch_size, "eval");
    if (e.contains("suite")) {
      if (!e.at("suite").is_array()) throw ConfigError("eval.suite must be a list");
      for (const auto& a : e.at("suite")) {
        json spec = a;
        if (!spec.is_object() || !spec.contains("name")) throw ConfigError("eval.suite entries need a name");
        const std::string name = spec.at("name").get<std::string>();
        spec.erase("name");
        c.eval.suite.push_back({name, detail::attack_from_json(spec, AttackSpec{}, "eval.suite." + name, clamp)});
      }
    }
  }
  if (c.eval.suite.empty()) c.eval.suite = default_suite(c.train.attack.epsilon, clamp);
  if (j.contains("sweep")) {
    const auto& s = j.at("sweep");
    check_keys(s, {"alphas", "seeds"}, "sweep");
    read(s, "alphas", c.sweep.alphas, "sweep");
    read(s, "seeds", c.sweep.seeds, "sweep");
  }
  if (c.sweep.alphas.empty()) c.sweep.alphas = {c.train.attack.epsilon, 2.0 * c.train.attack.epsilon};
  if (j.contains("lr_find")) {
    const auto& l = j.at("lr_find");
    check_keys(l, {"grid", "epochs", "train_subset", "divergence_factor"}, "lr_find");
    read(l, "grid", c.lr_find.grid, "lr_find");
    read(l, "epochs", c.lr_find.epochs, "lr_find");
    read(l, "train_subset", c.lr_find.train_subset, "lr_find");
    read(l, "divergence_factor", c.lr_find.divergence_factor, "lr_find");
  }
  if (j.contains("diagnose")) {
    const auto& d = j.at("diagnose");
    check_keys(d, {"bins", "subset", "attack"}, "diagnose");
    read(d, "bins", c.diagnose.bins, "diagnose");
    read(d, "subset", c.diagnose.subset, "diagnose");
  }
  c.diagnose.attack = AttackSpec{c.train.attack.epsilon, 0.01, 50, 1, InitKind::uniform, clamp};
  if (j.contains("diagnose") && j.at("diagnose").contains("attack")) {
    c.diagnose.attack = detail::attack_from_json(j.at("diagnose").at("attack"), c.diagnose.attack, "diagnose.attack", clamp);
  }
  c.validate();
  return c;
}

inline ExperimentConfig parse_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  return config_from_json(j);
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

}  // namespace fastadv

#endif  // FASTADV_IO_CONFIG_HPP
