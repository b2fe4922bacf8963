// fastadv: train, evaluate and diagnose adversarially trained classifiers.

#include <cstdint>
#include <exception>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "fastadv/io/runner.hpp"

namespace {

using namespace fastadv;

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::size_t> subset;
  std::optional<int> precision;
  bool no_clamp = false;
  std::string checkpoint;
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "Experiment config (JSON)")->check(CLI::ExistingFile);
  cmd->add_option("--seed", o.seed, "Override the config seed");
  cmd->add_option("--out", o.out, "Output directory");
  cmd->add_option("--subset", o.subset, "Cap on evaluated test examples (0 = all)");
  cmd->add_option("--precision", o.precision, "Compute precision")->check(CLI::IsMember({32, 64}));
  cmd->add_flag("--no-clamp", o.no_clamp, "Do not clamp perturbed inputs to [0,1]");
}

ExperimentConfig resolve(const Overrides& o) {
  ExperimentConfig c = o.config.empty() ? config_from_json(json::object()) : load_config(o.config);
  if (o.seed) c.seed = c.train.seed = *o.seed;
  if (o.out) c.out = *o.out;
  if (o.subset) c.eval.subset = *o.subset;
  if (o.precision) c.precision = *o.precision;
  if (o.no_clamp) {
    c.train.attack.clamp_image = false;
    c.diagnose.attack.clamp_image = false;
    for (auto& a : c.eval.suite) a.spec.clamp_image = false;
  }
  c.validate();
  return c;
}

void print_report(const EvalReport& r) {
  std::cout << "examples " << r.examples << "\nclean_accuracy " << r.clean_accuracy() << "\nrobust_accuracy "
            << r.robust_accuracy() << '\n';
  for (std::size_t i = 0; i < r.attacks.size(); ++i) {
    std::cout << r.attacks[i].name << "_accuracy " << r.attack_accuracy(i) << '\n';
  }
}

template <typename T>
int dispatch(const std::string& command, const ExperimentConfig& cfg, const std::string& checkpoint) {
  if (command == "train") {
    run_train<T>(cfg, &std::cerr);
    std::cout << "wrote " << cfg.out << '\n';
  } else if (command == "eval") {
    print_report(run_eval<T>(cfg, checkpoint));
  } else if (command == "diagnose") {
    const auto h = run_diagnose<T>(cfg, checkpoint);
    std::cout << "coordinates " << h.total() << "\nboundary_fraction " << h.boundary_fraction() << '\n';
  } else if (command == "lr-find") {
    const auto [trials, chosen] = run_lr_find<T>(cfg);
    for (const auto& t : trials) {
      std::cout << "lr " << t.lr << (t.diverged ? " diverged" : " ok") << " max_loss " << t.max_loss << '\n';
    }
    if (!chosen) {
      std::cerr << "error: every learning rate in the grid diverged\n";
      return 3;
    }
    std::cout << "selected " << *chosen << '\n';
  } else if (command == "sweep") {
    const auto s = run_sweep<T>(cfg);
    for (const auto& r : s.rows) {
      std::cout << "alpha " << r.alpha << " robust " << r.mean << " +- " << r.std_error << " (" << r.completed
                << " ok, " << r.failed << " failed)\n";
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fast adversarial training on MNIST and synthetic data"};
  app.require_subcommand(1);
  Overrides o;
  auto* train_cmd = app.add_subcommand("train", "Train, evaluate and checkpoint a model");
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint against the attack suite");
  auto* diag_cmd = app.add_subcommand("diagnose", "Histogram of PGD perturbations for a checkpoint");
  auto* lr_cmd = app.add_subcommand("lr-find", "Largest non-diverging learning rate on a grid");
  auto* sweep_cmd = app.add_subcommand("sweep", "FGSM step-size sweep over seeds");
  for (auto* cmd : {train_cmd, eval_cmd, diag_cmd, lr_cmd, sweep_cmd}) add_common(cmd, o);
  for (auto* cmd : {eval_cmd, diag_cmd}) {
    cmd->add_option("--checkpoint", o.checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  }
  CLI11_PARSE(app, argc, argv);
  const std::string command = app.get_subcommands().front()->get_name();

  try {
    const ExperimentConfig cfg = resolve(o);
    return cfg.precision == 64 ? dispatch<double>(command, cfg, o.checkpoint)
                               : dispatch<float>(command, cfg, o.checkpoint);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const DivergenceError& e) {
    std::cerr << "diverged (epoch " << e.epoch() << "): " << e.what() << '\n';
    return 3;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << '\n';
    return 4;
  } catch (const ShapeError& e) {
    std::cerr << "incompatible model: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
