#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <set>
#include <vector>

#include "pairint/bandit/policy.hpp"
#include "pairint/bandit/posterior.hpp"
#include "pairint/core/error.hpp"
#include "pairint/core/rng.hpp"
#include "pairint/core/types.hpp"

namespace pairint {

struct Observation {
  int round = 0;  // 1-based
  Pair pair;
  double score = 0.0;
};

/// History of revealed pairs and the set still available.
struct DiscoveryState {
  int n = 0;
  int round = 0;  // rounds completed
  std::vector<Observation> history;
  std::set<Pair> remaining;

  static DiscoveryState initial(int n) {
    DiscoveryState s;
    s.n = n;
    for (const auto& p : all_pairs(n)) s.remaining.insert(p);
    return s;
  }

  ScoreMatrix observed() const {
    ScoreMatrix m(n);
    for (const auto& o : history) m.set(o.pair, o.score);
    return m;
  }

  /// History and remaining set partition all n(n-1)/2 pairs.
  void check_invariant() const {
    std::set<Pair> seen;
    for (const auto& o : history) {
      if (!seen.insert(o.pair).second) throw NumericError("discovery state: pair revealed twice");
      if (remaining.contains(o.pair)) throw NumericError("discovery state: revealed pair still remaining");
    }
    if (seen.size() + remaining.size() != pair_count(static_cast<std::size_t>(n)))
      throw NumericError("discovery state: history and remaining do not cover all pairs");
  }
};

/// Per-round series (index r holds the value after round r + 1).
struct DiscoveryMetrics {
  std::vector<double> cumulative_regret;
  std::vector<double> recovery;
  std::vector<int> known_count;
};

/// Top-percentile set: the ceil(pct/100 * #pairs) highest entries, ties by canonical order.
inline std::set<Pair> top_percentile_pairs(const ScoreMatrix& truth, double percentile) {
  if (!(percentile > 0.0 && percentile < 100.0)) throw ConfigError("percentile must lie in (0, 100)");
  if (!truth.fully_observed()) throw DataError("truth matrix must be fully observed");
  auto pairs = all_pairs(truth.n());
  std::stable_sort(pairs.begin(), pairs.end(), [&](const Pair& a, const Pair& b) { return truth.value(a) > truth.value(b); });
  const auto size = static_cast<std::size_t>(std::ceil(percentile / 100.0 * static_cast<double>(pairs.size()) - 1e-9));
  return {pairs.begin(), pairs.begin() + static_cast<std::ptrdiff_t>(std::min(size, pairs.size()))};
}

/// Regret against the oracle that reveals the highest remaining true entries
/// (after t reveals it holds the top t entries), top-percentile recovery, and
/// the number of revealed known relations, each after every round.
inline DiscoveryMetrics compute_metrics(const DiscoveryState& state, const ScoreMatrix& truth, const RelationSet& relations,
                                        double percentile = 5.0) {
  const auto top = top_percentile_pairs(truth, percentile);
  std::vector<double> sorted;
  for (const auto& p : all_pairs(truth.n())) sorted.push_back(truth.value(p));
  std::sort(sorted.begin(), sorted.end(), std::greater<>());

  DiscoveryMetrics m;
  double oracle_sum = 0.0, policy_sum = 0.0;
  std::size_t revealed = 0, hits = 0;
  int known = 0;
  std::size_t k = 0;
  const int rounds = state.history.empty() ? 0 : state.history.back().round;
  for (int r = 1; r <= rounds; ++r) {
    for (; k < state.history.size() && state.history[k].round == r; ++k) {
      const auto& o = state.history[k];
      oracle_sum += sorted[revealed];
      policy_sum += truth.value(o.pair);
      ++revealed;
      hits += top.contains(o.pair);
      known += relations.contains(o.pair);
    }
    m.cumulative_regret.push_back(oracle_sum - policy_sum);
    m.recovery.push_back(static_cast<double>(hits) / static_cast<double>(top.size()));
    m.known_count.push_back(known);
  }
  return m;
}

struct DiscoveryOptions {
  int rounds = 50;
  double percentile = 5.0;
  RelationSet relations;
  /// Called after each round with the state (for a line-per-round log).
  std::function<void(const DiscoveryState&)> on_round;
};

struct DiscoveryRun {
  DiscoveryState state;
  DiscoveryMetrics metrics;
};

/// Adaptive discovery loop: each round refits the posterior from scratch on
/// the history (seed derived from hp.seed and the round), selects a batch,
/// and reveals the true entries of `env`.
inline DiscoveryRun run_discovery(const ScoreMatrix& env, const PolicyConfig& policy, const PosteriorHyperParams& hp,
                                  const DiscoveryOptions& opt, Rng& rng) {
  policy.validate();
  if (policy.needs_posterior()) hp.validate();
  if (!env.fully_observed()) throw DataError("environment matrix must be fully observed");
  if (opt.rounds < 0) throw ConfigError("rounds must be non-negative");
  const auto total = pair_count(static_cast<std::size_t>(env.n()));
  if (static_cast<std::size_t>(opt.rounds) * static_cast<std::size_t>(policy.batch) > total)
    throw ConfigError("budget of " + std::to_string(opt.rounds * policy.batch) + " reveals exceeds " +
                      std::to_string(total) + " pairs");

  DiscoveryState state = DiscoveryState::initial(env.n());
  for (int t = 1; t <= opt.rounds; ++t) {
    std::vector<Pair> remaining(state.remaining.begin(), state.remaining.end());
    std::vector<Pair> batch;
    if (policy.kind == PolicyKind::Oracle) {
      batch = select_oracle_batch(env, remaining, policy.batch);
    } else if (policy.kind == PolicyKind::Random) {
      batch = select_random_batch(remaining, policy.batch, rng);
    } else {
      PosteriorHyperParams round_hp = hp;
      round_hp.seed = derive_seed(hp.seed, {static_cast<std::uint64_t>(t)});
      const auto post = gibbs_posterior(state.observed(), round_hp);
      batch = select_batch(policy, reward_samples(post, remaining), rng);
    }
    for (const auto& p : batch) {
      if (!state.remaining.erase(p)) throw NumericError("policy selected an unavailable pair");
      state.history.push_back({t, p, env.value(p)});
    }
    state.round = t;
    state.check_invariant();
    if (opt.on_round) opt.on_round(state);
  }
  return {state, compute_metrics(state, env, opt.relations, opt.percentile)};
}

}  // namespace pairint
