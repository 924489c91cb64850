#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "pairint/bandit/posterior.hpp"
#include "pairint/core/error.hpp"
#include "pairint/core/rng.hpp"
#include "pairint/core/types.hpp"

namespace pairint {

enum class PolicyKind { Ids, Ts, Ucb, Us, Random, Oracle };

inline std::string to_string(PolicyKind k) {
  switch (k) {
    case PolicyKind::Ids: return "ids";
    case PolicyKind::Ts: return "ts";
    case PolicyKind::Ucb: return "ucb";
    case PolicyKind::Us: return "us";
    case PolicyKind::Random: return "random";
    case PolicyKind::Oracle: return "oracle";
  }
  return "?";
}

inline PolicyKind policy_kind_from_string(const std::string& s) {
  for (auto k : {PolicyKind::Ids, PolicyKind::Ts, PolicyKind::Ucb, PolicyKind::Us, PolicyKind::Random, PolicyKind::Oracle})
    if (to_string(k) == s) return k;
  throw ConfigError("unknown policy '" + s + "'");
}

struct PolicyConfig {
  PolicyKind kind = PolicyKind::Ids;
  double lambda = 2.0;  // IDS information-ratio exponent
  double beta = 1.0;    // UCB exploration weight
  int batch = 10;

  bool needs_posterior() const {
    return kind != PolicyKind::Random && kind != PolicyKind::Oracle;
  }

  void validate() const {
    if (batch < 1) throw ConfigError("batch size must be positive");
    if (kind == PolicyKind::Ids && !(lambda >= 1.0)) throw ConfigError("IDS lambda must be >= 1");
    if (kind == PolicyKind::Ucb && !(beta >= 0.0)) throw ConfigError("UCB beta must be non-negative");
  }
};

/// Posterior reward draws restricted to a set of actions:
/// values(d, a) = R_draw_d(actions[a]). Actions are kept in canonical order.
struct RewardSamples {
  std::vector<Pair> actions;
  Eigen::MatrixXd values;

  Index draws() const { return values.rows(); }
  Index size() const { return values.cols(); }
};

inline RewardSamples reward_samples(const PosteriorDraws& post, std::vector<Pair> remaining) {
  if (remaining.empty()) throw DataError("remaining action set is empty");
  if (post.size() == 0) throw DataError("posterior has no draws");
  std::sort(remaining.begin(), remaining.end());
  RewardSamples s{std::move(remaining), Eigen::MatrixXd(static_cast<Index>(post.size()), 0)};
  s.values.resize(static_cast<Index>(post.size()), static_cast<Index>(s.actions.size()));
  for (std::size_t d = 0; d < post.size(); ++d) {
    const Eigen::MatrixXd r = post.factors[d] * post.factors[d].transpose();
    for (std::size_t a = 0; a < s.actions.size(); ++a)
      s.values(static_cast<Index>(d), static_cast<Index>(a)) = r(s.actions[a].i, s.actions[a].j);
  }
  return s;
}

/// Per-draw optimal action; ties go to the lowest canonical action.
inline std::vector<Index> draw_argmax(const RewardSamples& s) {
  std::vector<Index> best(static_cast<std::size_t>(s.draws()));
  for (Index d = 0; d < s.draws(); ++d) {
    Index arg = 0;
    for (Index a = 1; a < s.size(); ++a)
      if (s.values(d, a) > s.values(d, arg)) arg = a;
    best[static_cast<std::size_t>(d)] = arg;
  }
  return best;
}

/// Expected instantaneous regret E[R(a*) - R(a)], a* the per-draw argmax.
inline std::vector<double> instant_regret(const RewardSamples& s) {
  if (s.size() == 0) throw DataError("remaining action set is empty");
  const auto best = draw_argmax(s);
  std::vector<double> delta(static_cast<std::size_t>(s.size()), 0.0);
  for (Index d = 0; d < s.draws(); ++d) {
    const double top = s.values(d, best[static_cast<std::size_t>(d)]);
    for (Index a = 0; a < s.size(); ++a) delta[static_cast<std::size_t>(a)] += top - s.values(d, a);
  }
  for (double& v : delta) v /= static_cast<double>(s.draws());
  return delta;
}

/// Variance of the conditional mean of R(a) given the identity of the optimal action:
///   sum_g p_g (mean_g R(a) - mean R(a))^2 over argmax groups g.
inline std::vector<double> conditional_variance(const RewardSamples& s) {
  if (s.size() == 0) throw DataError("remaining action set is empty");
  const auto best = draw_argmax(s);
  const Eigen::RowVectorXd overall = s.values.colwise().mean();
  std::map<Index, std::pair<Eigen::RowVectorXd, Index>> groups;
  for (Index d = 0; d < s.draws(); ++d) {
    auto [it, fresh] = groups.try_emplace(best[static_cast<std::size_t>(d)], Eigen::RowVectorXd::Zero(s.size()), 0);
    it->second.first += s.values.row(d);
    ++it->second.second;
  }
  std::vector<double> v(static_cast<std::size_t>(s.size()), 0.0);
  for (const auto& [arm, g] : groups) {
    const double p = static_cast<double>(g.second) / static_cast<double>(s.draws());
    const Eigen::RowVectorXd diff = g.first / static_cast<double>(g.second) - overall;
    for (Index a = 0; a < s.size(); ++a) v[static_cast<std::size_t>(a)] += p * diff(a) * diff(a);
  }
  return v;
}

/// Information ratio Delta^lambda / v with the ordering conventions:
/// Delta = 0 gives 0; v = 0 with Delta > 0 gives +inf.
inline std::vector<double> information_ratio(const std::vector<double>& delta, const std::vector<double>& v, double lambda) {
  std::vector<double> psi(delta.size());
  for (std::size_t a = 0; a < delta.size(); ++a) {
    if (delta[a] <= 0.0) psi[a] = 0.0;
    else if (v[a] <= 0.0) psi[a] = std::numeric_limits<double>::infinity();
    else psi[a] = std::pow(delta[a], lambda) / v[a];
  }
  return psi;
}

namespace detail {

// First `b` indices ordered by key (ascending when `ascending`), ties by index.
inline std::vector<Index> top_indices(const std::vector<double>& key, int b, bool ascending) {
  std::vector<Index> idx(key.size());
  std::iota(idx.begin(), idx.end(), Index{0});
  std::stable_sort(idx.begin(), idx.end(), [&](Index x, Index y) {
    const double kx = key[static_cast<std::size_t>(x)], ky = key[static_cast<std::size_t>(y)];
    return ascending ? kx < ky : kx > ky;
  });
  idx.resize(static_cast<std::size_t>(b));
  return idx;
}

}  // namespace detail

/// Chooses `policy.batch` distinct actions from `s.actions`, in selection order.
inline std::vector<Pair> select_batch(const PolicyConfig& policy, const RewardSamples& s, Rng& rng) {
  policy.validate();
  const int b = policy.batch;
  if (s.size() < 1) throw DataError("remaining action set is empty");
  if (b > s.size()) throw ConfigError("batch larger than remaining action set");
  std::vector<Index> chosen;
  switch (policy.kind) {
    case PolicyKind::Ids: {
      const auto psi = information_ratio(instant_regret(s), conditional_variance(s), policy.lambda);
      chosen = detail::top_indices(psi, b, true);
      break;
    }
    case PolicyKind::Ts: {
      std::vector<bool> taken(static_cast<std::size_t>(s.size()), false);
      for (int t = 0; t < b; ++t) {
        const Index d = t % s.draws();
        Index arg = -1;
        for (Index a = 0; a < s.size(); ++a)
          if (!taken[static_cast<std::size_t>(a)] && (arg < 0 || s.values(d, a) > s.values(d, arg))) arg = a;
        taken[static_cast<std::size_t>(arg)] = true;
        chosen.push_back(arg);
      }
      break;
    }
    case PolicyKind::Ucb:
    case PolicyKind::Us: {
      const Eigen::RowVectorXd mean = s.values.colwise().mean();
      const Eigen::RowVectorXd sd =
          ((s.values.rowwise() - mean).array().square().colwise().sum() / static_cast<double>(s.draws())).sqrt();
      std::vector<double> key(static_cast<std::size_t>(s.size()));
      for (Index a = 0; a < s.size(); ++a)
        key[static_cast<std::size_t>(a)] = policy.kind == PolicyKind::Ucb ? mean(a) + policy.beta * sd(a) : sd(a);
      chosen = detail::top_indices(key, b, false);
      break;
    }
    case PolicyKind::Random: {
      for (auto k : rng.sample_without_replacement(static_cast<std::size_t>(s.size()), static_cast<std::size_t>(b)))
        chosen.push_back(static_cast<Index>(k));
      break;
    }
    case PolicyKind::Oracle:
      throw ConfigError("the oracle policy needs the true reward matrix; use select_oracle_batch");
  }
  std::vector<Pair> out;
  for (Index a : chosen) out.push_back(s.actions[static_cast<std::size_t>(a)]);
  return out;
}

/// Random selection without posterior draws.
inline std::vector<Pair> select_random_batch(std::vector<Pair> remaining, int b, Rng& rng) {
  std::sort(remaining.begin(), remaining.end());
  if (b > static_cast<int>(remaining.size())) throw ConfigError("batch larger than remaining action set");
  std::vector<Pair> out;
  for (auto k : rng.sample_without_replacement(remaining.size(), static_cast<std::size_t>(b))) out.push_back(remaining[k]);
  return out;
}

/// The b highest true entries among `remaining`, ties by canonical order.
inline std::vector<Pair> select_oracle_batch(const ScoreMatrix& truth, std::vector<Pair> remaining, int b) {
  std::sort(remaining.begin(), remaining.end());
  if (b > static_cast<int>(remaining.size())) throw ConfigError("batch larger than remaining action set");
  std::vector<double> key;
  for (const auto& p : remaining) key.push_back(truth.value(p));
  std::vector<Pair> out;
  for (Index a : detail::top_indices(key, b, false)) out.push_back(remaining[static_cast<std::size_t>(a)]);
  return out;
}

}  // namespace pairint
