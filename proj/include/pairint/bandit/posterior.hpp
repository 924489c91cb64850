#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <vector>

#include "pairint/core/error.hpp"
#include "pairint/core/rng.hpp"
#include "pairint/core/types.hpp"

namespace pairint {

struct PosteriorHyperParams {
  int rank = 5;
  double prior_sd = 1.0;
  double noise_sd = 0.1;
  int n_draws = 500;
  int burn_in = 100;
  int thinning = 1;
  int chains = 1;
  std::uint64_t seed = 0;

  void validate() const {
    if (rank < 1) throw ConfigError("posterior rank must be positive");
    if (!(prior_sd > 0.0) || !(noise_sd > 0.0)) throw ConfigError("posterior prior_sd and noise_sd must be positive");
    if (n_draws < 1) throw ConfigError("posterior n_draws must be positive");
    if (burn_in < 0) throw ConfigError("posterior burn_in must be non-negative");
    if (thinning < 1) throw ConfigError("posterior thinning must be positive");
    if (chains < 1 || chains > n_draws) throw ConfigError("posterior chains must lie in [1, n_draws]");
  }
};

/// Monte Carlo draws of the n x m factor U; reward draw R = U U^T.
struct PosteriorDraws {
  int n = 0;
  int rank = 0;
  std::vector<Eigen::MatrixXd> factors;

  std::size_t size() const { return factors.size(); }
  double entry(std::size_t draw, int i, int j) const { return factors[draw].row(i).dot(factors[draw].row(j)); }

  /// Posterior mean of U U^T.
  Eigen::MatrixXd mean_reward() const {
    Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(n, n);
    for (const auto& u : factors) acc.noalias() += u * u.transpose();
    return acc / static_cast<double>(factors.size());
  }
};

/// Observed neighbours of one row: (column, value).
using RowObservations = std::vector<std::pair<int, double>>;

inline std::vector<RowObservations> row_observations(const ScoreMatrix& observed) {
  std::vector<RowObservations> rows(static_cast<std::size_t>(observed.n()));
  for (int i = 0; i < observed.n(); ++i)
    for (int j = i + 1; j < observed.n(); ++j)
      if (auto v = observed.get(i, j)) {
        if (!std::isfinite(*v)) throw DataError("gibbs_posterior: non-finite observation");
        rows[static_cast<std::size_t>(i)].emplace_back(j, *v);
        rows[static_cast<std::size_t>(j)].emplace_back(i, *v);
      }
  return rows;
}

/// Gaussian conditional of row u_i given the other rows:
///   precision = I / prior_sd^2 + sum_j u_j u_j^T / noise_sd^2
///   mean      = precision^-1 sum_j R_ij u_j / noise_sd^2
struct RowConditional {
  Vector mean;
  Eigen::MatrixXd precision;
};

inline RowConditional row_conditional(const Eigen::MatrixXd& u, const RowObservations& obs, double prior_sd,
                                      double noise_sd) {
  const Index m = u.cols();
  const double inv_noise = 1.0 / (noise_sd * noise_sd);
  Eigen::MatrixXd prec = Eigen::MatrixXd::Identity(m, m) / (prior_sd * prior_sd);
  Vector rhs = Vector::Zero(m);
  for (const auto& [j, v] : obs) {
    const auto uj = u.row(j).transpose();
    prec.noalias() += inv_noise * uj * uj.transpose();
    rhs.noalias() += (inv_noise * v) * uj;
  }
  Eigen::LLT<Eigen::MatrixXd> llt(prec);
  if (llt.info() != Eigen::Success) throw NumericError("gibbs_posterior: singular conditional precision");
  return {llt.solve(rhs), std::move(prec)};
}

/// One draw from the row conditional: mean + L^-T z with precision = L L^T.
inline Vector sample_row(const RowConditional& cond, Rng& rng) {
  const Index m = cond.mean.size();
  Eigen::LLT<Eigen::MatrixXd> llt(cond.precision);
  Vector z(m);
  for (Index k = 0; k < m; ++k) z(k) = rng.normal();
  return cond.mean + llt.matrixU().solve(z);
}

/// Gibbs sampler for R ~ U U^T + noise with iid N(0, prior_sd^2) factor
/// entries. Each sweep resamples every row of U from its exact Gaussian
/// conditional. Chains start from prior draws; chain c uses the stream
/// derive_seed(seed, {c}) and contributes a contiguous block of draws
/// (chain-major order).
inline PosteriorDraws gibbs_posterior(const ScoreMatrix& observed, const PosteriorHyperParams& hp) {
  hp.validate();
  const int n = observed.n();
  const auto obs = row_observations(observed);
  PosteriorDraws out;
  out.n = n;
  out.rank = hp.rank;
  out.factors.reserve(static_cast<std::size_t>(hp.n_draws));
  for (int chain = 0; chain < hp.chains; ++chain) {
    const int quota = hp.n_draws / hp.chains + (chain < hp.n_draws % hp.chains ? 1 : 0);
    Rng rng(derive_seed(hp.seed, {static_cast<std::uint64_t>(chain)}));
    Eigen::MatrixXd u(n, hp.rank);
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < hp.rank; ++c) u(r, c) = hp.prior_sd * rng.normal();
    const int sweeps = hp.burn_in + quota * hp.thinning;
    for (int s = 1; s <= sweeps; ++s) {
      for (int i = 0; i < n; ++i) {
        const auto cond = row_conditional(u, obs[static_cast<std::size_t>(i)], hp.prior_sd, hp.noise_sd);
        u.row(i) = sample_row(cond, rng).transpose();
      }
      if (!u.allFinite()) throw NumericError("gibbs_posterior: non-finite factor draw");
      if (s > hp.burn_in && (s - hp.burn_in) % hp.thinning == 0) out.factors.push_back(u);
    }
  }
  return out;
}

}  // namespace pairint
