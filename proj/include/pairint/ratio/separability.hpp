#pragma once

#include <cmath>
#include <map>
#include <mutex>
#include <optional>
#include <variant>

#include "pairint/core/error.hpp"
#include "pairint/core/types.hpp"
#include "pairint/ratio/knn_kl.hpp"
#include "pairint/ratio/nre.hpp"
#include "pairint/ratio/smile.hpp"

namespace pairint {

struct KnnEstimator {
  int k = 5;
};

struct NreSmileEstimator {
  NreTrainConfig config;
  double tau = 5.0;
};

using KlEstimatorChoice = std::variant<KnnEstimator, NreSmileEstimator>;

struct SeparabilityResult {
  double score = 0.0;  // |KL_i + KL_j - KL_ij|
  double kl_i = 0.0;
  double kl_j = 0.0;
  double kl_ij = 0.0;
};

/// Computes KL(p_0 || p_c) per condition (P = control samples, Q = condition
/// samples) and combines them into separability scores. KL values are cached
/// per condition, so a full pair sweep estimates each condition once. For the
/// NRE route one model trained on all conditions serves every pair.
class SeparabilityScorer {
 public:
  SeparabilityScorer(const ExperimentDataset& ds, KlEstimatorChoice est, std::optional<RatioModel> model = {},
                     std::uint64_t seed = 0)
      : ds_(ds), est_(std::move(est)), model_(std::move(model)), seed_(seed) {
    if (const auto* knn = std::get_if<KnnEstimator>(&est_); knn && knn->k < 1)
      throw ConfigError("KNN estimator needs k >= 1");
    if (const auto* nre = std::get_if<NreSmileEstimator>(&est_); nre && !(nre->tau > 0.0))
      throw ConfigError("SMILE tau must be positive");
  }

  SeparabilityScorer(ExperimentDataset&&, KlEstimatorChoice, std::optional<RatioModel> = {}, std::uint64_t = 0) = delete;

  /// KL(p_0 || p_c).
  double kl_from_control(const Condition& c) {
    {
      std::lock_guard lock(mu_);
      if (auto it = cache_.find(c); it != cache_.end()) return it->second;
    }
    const SampleMatrix& control = ds_.at(Condition::control());
    const SampleMatrix& cond = ds_.at(c);
    double kl = 0.0;
    if (const auto* knn = std::get_if<KnnEstimator>(&est_)) {
      kl = knn_kl(control, cond, knn->k);
    } else {
      const auto& nre = std::get<NreSmileEstimator>(est_);
      const RatioModel& m = model();
      // f = log p_0 / p_c, evaluated on both populations.
      const auto f_p = nre_log_ratios(m, control, Condition::control(), c);
      const auto f_q = nre_log_ratios(m, cond, Condition::control(), c);
      kl = smile_kl(f_p, f_q, nre.tau);
    }
    std::lock_guard lock(mu_);
    cache_.emplace(c, kl);
    return kl;
  }

  SeparabilityResult score(int i, int j) {
    const Pair p(i, j);
    for (const auto& c : {Condition::control(), Condition::single(p.i), Condition::single(p.j), Condition::pair(p)})
      if (!ds_.contains(c)) throw DataError("separability_score: condition " + c.to_string() + " absent");
    SeparabilityResult r;
    r.kl_i = kl_from_control(Condition::single(p.i));
    r.kl_j = kl_from_control(Condition::single(p.j));
    r.kl_ij = kl_from_control(Condition::pair(p));
    r.score = std::abs(r.kl_i + r.kl_j - r.kl_ij);
    if (i > j) std::swap(r.kl_i, r.kl_j);
    return r;
  }

  /// The ratio model in use, training it on first request if none was supplied.
  const RatioModel& model() {
    std::lock_guard lock(model_mu_);
    if (!model_) {
      const auto& nre = std::get<NreSmileEstimator>(est_);
      Rng rng(seed_);
      model_ = nre_train(ds_, nre.config, rng);
    }
    return *model_;
  }

 private:
  const ExperimentDataset& ds_;
  KlEstimatorChoice est_;
  std::optional<RatioModel> model_;
  std::uint64_t seed_;
  std::map<Condition, double> cache_;
  std::mutex mu_;
  std::mutex model_mu_;
};

/// One-shot separability score for a single pair.
inline SeparabilityResult separability_score(const ExperimentDataset& ds, int i, int j, const KlEstimatorChoice& est,
                                             std::optional<RatioModel> model = {}, std::uint64_t seed = 0) {
  SeparabilityScorer scorer(ds, est, std::move(model), seed);
  return scorer.score(i, j);
}

}  // namespace pairint
