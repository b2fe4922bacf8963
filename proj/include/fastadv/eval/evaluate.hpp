#ifndef FASTADV_EVAL_EVALUATE_HPP
#define FASTADV_EVAL_EVALUATE_HPP

#include <algorithm>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "fastadv/attack/attack.hpp"
#include "fastadv/core/rng.hpp"
#include "fastadv/data/dataset.hpp"
#include "fastadv/nn/model.hpp"

namespace fastadv {

struct NamedAttack {
  std::string name;
  AttackSpec spec;

  friend bool operator==(const NamedAttack&, const NamedAttack&) = default;
};

/// PGD (50 steps of 0.01, 10 uniform restarts) plus an FGSM candidate.
inline std::vector<NamedAttack> default_suite(double epsilon, bool clamp_image = true) {
  return {{"pgd", AttackSpec{epsilon, 0.01, 50, 10, InitKind::uniform, clamp_image}},
          {"fgsm", fgsm_spec(epsilon, clamp_image)}};
}

struct AttackOutcome {
  std::string name;
  AttackSpec spec;
  std::size_t robust = 0;  // clean-correct and this attack failed
};

/// Integer counts only, so shard reports merge associatively.
struct EvalReport {
  std::size_t examples = 0;
  std::size_t clean_correct = 0;
  std::size_t suite_robust = 0;  // clean-correct and every attack failed
  std::vector<AttackOutcome> attacks;
  std::uint64_t seed = 0;

  double clean_accuracy() const { return ratio(clean_correct); }
  double robust_accuracy() const { return ratio(suite_robust); }
  double attack_accuracy(std::size_t i) const { return ratio(attacks.at(i).robust); }

  void merge(const EvalReport& other) {
    if (attacks.size() != other.attacks.size()) throw std::invalid_argument("merging reports of different suites");
    examples += other.examples;
    clean_correct += other.clean_correct;
    suite_robust += other.suite_robust;
    for (std::size_t i = 0; i < attacks.size(); ++i) attacks[i].robust += other.attacks[i].robust;
  }

 private:
  double ratio(std::size_t k) const { return examples ? static_cast<double>(k) / static_cast<double>(examples) : 0.0; }
};

struct EvalOptions {
  std::size_t subset = 0;  // 0 = whole dataset
  std::size_t batch_size = 500;
};

/// Evaluates one contiguous shard. Batch b of attack a draws from the rng
/// stream (seed, eval, b, a), so results do not depend on sharding.
template <typename T>
EvalReport evaluate_batch(const Model<T>& model, const Batch<T>& batch, const std::vector<NamedAttack>& suite,
                          std::uint64_t seed) {
  EvalReport r;
  r.seed = seed;
  r.examples = batch.size();
  for (const auto& a : suite) r.attacks.push_back({a.name, a.spec, 0});
  const auto clean = argmax_rows(model.logits(batch.images));
  std::vector<char> robust(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) robust[i] = clean[i] == batch.labels[i];
  for (char ok : robust) r.clean_correct += ok;
  for (std::size_t a = 0; a < suite.size(); ++a) {
    Rng rng = make_rng(seed, {stream::eval, batch.index, a});
    const auto res = pgd_attack(model, batch.images, batch.labels, suite[a].spec, rng);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const bool resisted = clean[i] == batch.labels[i] && !res.success[i];
      r.attacks[a].robust += resisted;
      robust[i] = robust[i] && resisted;
    }
  }
  for (char ok : robust) r.suite_robust += ok;
  return r;
}

template <typename T>
EvalReport evaluate(const Model<T>& model, const Dataset<T>& data, const std::vector<NamedAttack>& suite,
                    std::uint64_t seed, EvalOptions opt = {}) {
  if (suite.empty()) throw std::invalid_argument("evaluate: empty attack suite");
  if (data.size() == 0) throw std::invalid_argument("evaluate: empty dataset");
  for (const auto& a : suite) a.spec.validate();
  const std::size_t n = opt.subset ? std::min(opt.subset, data.size()) : data.size();
  EvalReport total;
  total.seed = seed;
  for (const auto& a : suite) total.attacks.push_back({a.name, a.spec, 0});
  std::size_t b = 0;
  for (std::size_t start = 0; start < n; start += opt.batch_size, ++b) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(n, start + opt.batch_size); ++i) idx.push_back(i);
    total.merge(evaluate_batch(model, gather(data, idx, b), suite, seed));
  }
  return total;
}

}  // namespace fastadv

#endif  // FASTADV_EVAL_EVALUATE_HPP
