#ifndef FASTADV_IO_REPORT_HPP
#define FASTADV_IO_REPORT_HPP

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fastadv/eval/diagnostics.hpp"
#include "fastadv/eval/evaluate.hpp"
#include "fastadv/train/trainer.hpp"

namespace fastadv {

inline constexpr const char* kMetricsHeader = "# fastadv metrics v1";
inline constexpr const char* kMetricsColumns = "epoch,lr,train_loss,clean_acc,fgsm_acc,probe_pgd_acc,wall_seconds";

/// Shortest round-trip decimal form; "nan"/"inf" for non-finite values.
inline std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

/// Comment preamble shared by every CSV: a title line and the config echo.
inline std::string csv_preamble(const std::string& title, const nlohmann::ordered_json& config) {
  return "# " + title + "\n# config: " + config.dump() + "\n";
}

inline std::string metrics_csv(const RunRecord& rec, const nlohmann::ordered_json& config, bool wall_time) {
  std::ostringstream os;
  os << kMetricsHeader << "\n# config: " << config.dump() << '\n' << kMetricsColumns << '\n';
  for (const auto& r : rec.rows) {
    os << r.epoch << ',' << format_number(r.lr) << ',' << format_number(r.train_loss) << ','
       << format_number(r.clean_acc) << ',' << format_number(r.fgsm_acc) << ',' << format_number(r.probe_pgd_acc)
       << ',' << (wall_time ? format_number(r.wall_seconds) : "") << '\n';
  }
  return os.str();
}

inline std::string steps_csv(const RunRecord& rec, const nlohmann::ordered_json& config) {
  std::ostringstream os;
  os << csv_preamble("fastadv steps v1", config) << "epoch,batch,replay,t,lr,loss\n";
  for (const auto& s : rec.steps) {
    os << s.epoch << ',' << s.batch << ',' << s.replay << ',' << format_number(s.t) << ',' << format_number(s.lr)
       << ',' << format_number(s.loss) << '\n';
  }
  return os.str();
}

inline std::string curves_csv(const std::vector<CurvePoint>& curve, const nlohmann::ordered_json& config) {
  std::ostringstream os;
  os << csv_preamble("fastadv curves v1", config) << "epoch,train_loss,fgsm_error,pgd_error\n";
  for (const auto& c : curve) {
    os << c.epoch << ',' << format_number(c.train_loss) << ',' << format_number(c.fgsm_error) << ','
       << format_number(c.pgd_error) << '\n';
  }
  return os.str();
}

inline std::string histogram_csv(const Histogram& h, const nlohmann::ordered_json& config) {
  std::ostringstream os;
  os << csv_preamble("fastadv histogram v1", config) << "bin,lower,upper,count\n";
  for (std::size_t i = 0; i < h.bins(); ++i) {
    os << i << ',' << format_number(h.lower(i)) << ',' << format_number(h.upper(i)) << ',' << h.counts[i] << '\n';
  }
  return os.str();
}

inline std::string sweep_csv(const SweepResult& s, const nlohmann::ordered_json& config) {
  std::ostringstream os;
  os << csv_preamble("fastadv sweep v1", config) << "alpha,mean_robust_acc,std_error,completed,failed\n";
  for (const auto& r : s.rows) {
    os << format_number(r.alpha) << ',' << format_number(r.mean) << ',' << format_number(r.std_error) << ','
       << r.completed << ',' << r.failed << '\n';
  }
  return os.str();
}

inline std::string sweep_cells_csv(const SweepResult& s, const nlohmann::ordered_json& config) {
  std::ostringstream os;
  os << csv_preamble("fastadv sweep cells v1", config) << "alpha,seed,robust_acc,clean_acc,early_stop_epoch,error\n";
  for (const auto& c : s.cells) {
    std::string err = c.error;
    for (char& ch : err) {
      if (ch == ',' || ch == '\n') ch = ' ';
    }
    os << format_number(c.alpha) << ',' << c.seed << ','
       << (c.robust_accuracy ? format_number(*c.robust_accuracy) : "") << ','
       << (c.clean_accuracy ? format_number(*c.clean_accuracy) : "") << ','
       << (c.early_stop_epoch ? std::to_string(*c.early_stop_epoch) : "") << ',' << err << '\n';
  }
  return os.str();
}

inline nlohmann::ordered_json attack_json(const AttackSpec& a) {
  return {{"epsilon", a.epsilon}, {"alpha", a.alpha},           {"steps", a.steps},
          {"restarts", a.restarts}, {"init", to_string(a.init)}, {"clamp_image", a.clamp_image}};
}

inline nlohmann::ordered_json report_json(const EvalReport& r) {
  nlohmann::ordered_json attacks = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < r.attacks.size(); ++i) {
    attacks.push_back({{"name", r.attacks[i].name},
                       {"spec", attack_json(r.attacks[i].spec)},
                       {"robust", r.attacks[i].robust},
                       {"robust_accuracy", r.attack_accuracy(i)}});
  }
  return {{"examples", r.examples},
          {"seed", r.seed},
          {"clean_correct", r.clean_correct},
          {"clean_accuracy", r.clean_accuracy()},
          {"suite_robust", r.suite_robust},
          {"robust_accuracy", r.robust_accuracy()},
          {"attacks", attacks}};
}

inline nlohmann::ordered_json record_json(const RunRecord& r) {
  nlohmann::ordered_json j{{"epochs_run", r.rows.size()},
                           {"minibatches_per_epoch", r.minibatches_per_epoch},
                           {"gradient_passes", r.gradient_passes},
                           {"model_updates", r.model_updates},
                           {"best_epoch", r.best_epoch}};
  j["early_stop_epoch"] = r.early_stop_epoch ? nlohmann::ordered_json(*r.early_stop_epoch) : nlohmann::ordered_json();
  return j;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

}  // namespace fastadv

#endif  // FASTADV_IO_REPORT_HPP
