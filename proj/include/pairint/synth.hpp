#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "pairint/core/error.hpp"
#include "pairint/core/rng.hpp"
#include "pairint/core/types.hpp"

namespace pairint {

/// Random invertible map R^d -> R^d: square affine layers with leaky-ReLU
/// between them (none after the last layer).
struct RandomMlp {
  struct Layer {
    Eigen::MatrixXd weight;
    Vector bias;
  };
  std::vector<Layer> layers;
  double leaky_slope = 0.2;
  Index dim = 0;

  /// Weights are Haar-orthogonal (QR of an iid Gaussian draw, signs fixed by
  /// diag R); biases iid N(0, 0.1^2). A layer with |det W| <= 1e-9 is redrawn.
  static RandomMlp random(Index dim, int depth, double leaky_slope, Rng& rng) {
    if (dim < 1 || depth < 0) throw ConfigError("RandomMlp: dim must be positive and depth non-negative");
    if (!(leaky_slope > 0.0 && leaky_slope < 1.0)) throw ConfigError("RandomMlp: leaky slope must be in (0,1)");
    RandomMlp g;
    g.dim = dim;
    g.leaky_slope = leaky_slope;
    for (int l = 0; l < depth; ++l) {
      Layer layer{Eigen::MatrixXd(dim, dim), Vector(dim)};
      do {
        Eigen::MatrixXd a(dim, dim);
        for (Index c = 0; c < dim; ++c)
          for (Index r = 0; r < dim; ++r) a(r, c) = rng.normal();
        Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
        Eigen::MatrixXd q = qr.householderQ();
        const Eigen::MatrixXd rm = qr.matrixQR().triangularView<Eigen::Upper>();
        for (Index c = 0; c < dim; ++c)
          if (rm(c, c) < 0.0) q.col(c) = -q.col(c);
        layer.weight = std::move(q);
      } while (std::abs(layer.weight.determinant()) <= 1e-9);
      for (Index r = 0; r < dim; ++r) layer.bias(r) = 0.1 * rng.normal();
      g.layers.push_back(std::move(layer));
    }
    return g;
  }

  static RandomMlp identity(Index dim) {
    RandomMlp g;
    g.dim = dim;
    return g;
  }
};

/// x = g(z) row by row.
inline SampleMatrix apply_diffeomorphism(const RandomMlp& g, const SampleMatrix& latents) {
  if (g.layers.empty()) {
    if (g.dim != 0 && latents.dim() != g.dim) throw DataError("apply_diffeomorphism: dimension mismatch");
    return latents;
  }
  if (latents.dim() != g.dim) throw DataError("apply_diffeomorphism: dimension mismatch");
  Eigen::MatrixXd a = latents.data().transpose();
  for (std::size_t l = 0; l < g.layers.size(); ++l) {
    Eigen::MatrixXd z = g.layers[l].weight * a;
    z.colwise() += g.layers[l].bias;
    if (l + 1 < g.layers.size()) z = z.unaryExpr([s = g.leaky_slope](double v) { return v > 0.0 ? v : s * v; });
    a = std::move(z);
  }
  return SampleMatrix(RowMatrix(a.transpose()));
}

// ---------------------------------------------------------------------------
// Separable DAG benchmark: three independent latents, unit-variance mean shifts.

struct SeparableSpec {
  int n_per_class = 20000;
  int mlp_depth = 7;
  double leaky_slope = 0.2;
  std::uint64_t seed = 0;
};

namespace separable {

inline constexpr int kPerturbations = 4;  // A, B, C, D
inline constexpr double kShift = 3.0;

/// Latent coordinates moved to N(3, 1) by a set of perturbations:
/// P1 by A or B, P2 by B, P3 by C or D.
inline std::array<bool, 3> shifted(const Condition& c) {
  std::set<int> s;
  if (c.is_single()) s = {c.i()};
  if (c.is_double()) s = {c.i(), c.j()};
  return {s.contains(0) || s.contains(1), s.contains(1), s.contains(2) || s.contains(3)};
}

/// Closed-form latent KL(p_0 || p_c): 4.5 per shifted coordinate.
inline double oracle_kl(const Condition& c) {
  double kl = 0.0;
  for (bool b : shifted(c))
    if (b) kl += kShift * kShift / 2.0;
  return kl;
}

inline double oracle_score(int i, int j) {
  const Pair p(i, j);
  return std::abs(oracle_kl(Condition::single(p.i)) + oracle_kl(Condition::single(p.j)) -
                  oracle_kl(Condition::pair(p)));
}

}  // namespace separable

inline std::vector<Condition> all_conditions(int n) {
  std::vector<Condition> out{Condition::control()};
  for (int i = 0; i < n; ++i) out.push_back(Condition::single(i));
  for (const auto& p : all_pairs(n)) out.push_back(Condition::pair(p));
  return out;
}

/// Control, 4 singles, 6 doubles; observations g(z) with a fresh RandomMlp
/// (depth 0 gives g = identity). Ground-truth inseparable pairs: A-B, C-D.
inline ExperimentDataset gen_separable_tabular(const SeparableSpec& spec) {
  if (spec.n_per_class < 1) throw ConfigError("n_per_class must be positive");
  Rng rng(spec.seed);
  const RandomMlp g = RandomMlp::random(3, spec.mlp_depth, spec.leaky_slope, rng);
  std::map<Condition, SampleMatrix> samples;
  for (const auto& c : all_conditions(separable::kPerturbations)) {
    const auto sh = separable::shifted(c);
    RowMatrix z(spec.n_per_class, 3);
    for (Index r = 0; r < z.rows(); ++r)
      for (Index k = 0; k < 3; ++k) z(r, k) = rng.normal(sh[static_cast<std::size_t>(k)] ? separable::kShift : 0.0, 1.0);
    samples.emplace(c, apply_diffeomorphism(g, SampleMatrix(std::move(z))));
  }
  return ExperimentDataset(separable::kPerturbations, std::move(samples), {"A", "B", "C", "D"},
                           {Pair(0, 1), Pair(2, 3)});
}

// ---------------------------------------------------------------------------
// Disjoint-mixture benchmark: six-component 1-D latent mixture.

struct MixtureSpec {
  int n_per_class = 20000;
  int mlp_depth = 10;
  double leaky_slope = 0.2;
  std::uint64_t seed = 0;
};

namespace mixture {

inline constexpr int kPerturbations = 7;  // A..G
inline const std::vector<double> kWeights{0.125, 0.125, 0.125, 0.125, 0.25, 0.25};

struct Component {
  enum class Family { Normal, Cauchy } family = Family::Normal;
  double location = 0.0;
  double scale = 1.0;
};

/// Component distributions under a set of perturbations. Mixing weights never change.
inline std::array<Component, 6> components(const std::set<int>& s) {
  using F = Component::Family;
  std::array<Component, 6> c{};
  if (s.contains(0)) c[1] = {F::Normal, 5.0, 1.0};
  if (s.contains(1)) c[2] = {F::Normal, 10.0, 1.0};
  if (s.contains(2)) c[3] = {F::Normal, -5.0, 5.0};
  const bool d = s.contains(3), e = s.contains(4);
  if (d && e) c[4] = {F::Normal, 10.0, 5.0};
  else if (d) c[4] = {F::Normal, 0.0, 5.0};
  else if (e) c[4] = {F::Normal, -10.0, 5.0};
  const bool f = s.contains(5), gg = s.contains(6);
  if (f && gg) c[5] = {F::Cauchy, 20.0, 1.0};
  else if (f) c[5] = {F::Cauchy, 15.0, 1.0};
  else if (gg) c[5] = {F::Cauchy, -15.0, 1.0};
  return c;
}

inline std::set<int> perturbation_set(const Condition& c) {
  if (c.is_single()) return {c.i()};
  if (c.is_double()) return {c.i(), c.j()};
  return {};
}

struct LatentDraws {
  std::vector<double> values;
  std::vector<int> component;
};

/// All n categorical component labels first, then one draw per sample from its
/// component, so the labels depend on the rng state alone and never on c.
inline LatentDraws sample_latent(const Condition& c, int n, Rng& rng) {
  const auto comps = components(perturbation_set(c));
  LatentDraws out;
  out.values.reserve(static_cast<std::size_t>(n));
  out.component.reserve(static_cast<std::size_t>(n));
  for (int r = 0; r < n; ++r) out.component.push_back(static_cast<int>(rng.categorical(kWeights)));
  for (int k : out.component) {
    const auto& comp = comps[static_cast<std::size_t>(k)];
    out.values.push_back(comp.family == Component::Family::Normal ? rng.normal(comp.location, comp.scale)
                                                                  : rng.cauchy(comp.location, comp.scale));
  }
  return out;
}

}  // namespace mixture

/// Control, 7 singles, 21 doubles. The 1-D latent is padded with two iid N(0,1)
/// nuisance coordinates and mapped through a square RandomMlp of dimension 3.
/// Ground-truth interacting pairs: D-E, F-G.
inline ExperimentDataset gen_disjoint_mixture(const MixtureSpec& spec) {
  if (spec.n_per_class < 1) throw ConfigError("n_per_class must be positive");
  Rng rng(spec.seed);
  const RandomMlp g = RandomMlp::random(3, spec.mlp_depth, spec.leaky_slope, rng);
  std::map<Condition, SampleMatrix> samples;
  for (const auto& c : all_conditions(mixture::kPerturbations)) {
    const auto lat = mixture::sample_latent(c, spec.n_per_class, rng);
    RowMatrix z(spec.n_per_class, 3);
    for (Index r = 0; r < z.rows(); ++r) {
      z(r, 0) = lat.values[static_cast<std::size_t>(r)];
      z(r, 1) = rng.normal();
      z(r, 2) = rng.normal();
    }
    samples.emplace(c, apply_diffeomorphism(g, SampleMatrix(std::move(z))));
  }
  return ExperimentDataset(mixture::kPerturbations, std::move(samples), {"A", "B", "C", "D", "E", "F", "G"},
                           {Pair(3, 4), Pair(5, 6)});
}

// ---------------------------------------------------------------------------
// Low-rank reward matrices.

/// n x rank factor with iid N(0, 1/sqrt(rank)) entries (variance 1/sqrt(rank)),
/// so off-diagonal entries of U U^T have unit variance.
inline Eigen::MatrixXd lowrank_factor(int n, int rank, Rng& rng) {
  if (rank < 1 || rank > n) throw ConfigError("rank must lie in [1, n]");
  Eigen::MatrixXd u(n, rank);
  const double sd = std::pow(static_cast<double>(rank), -0.25);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < rank; ++c) u(r, c) = sd * rng.normal();
  return u;
}

/// Fully observed R = U U^T (+ symmetric N(0, noise_sd^2) noise), diagonal dropped.
inline ScoreMatrix gen_lowrank_reward(int n, int rank, double noise_sd, std::uint64_t seed) {
  if (n < 2) throw ConfigError("n must be at least 2");
  if (rank < 1 || rank > n) throw ConfigError("rank must lie in [1, n]");
  if (!(noise_sd >= 0.0)) throw ConfigError("noise_sd must be non-negative");
  Rng rng(seed);
  const Eigen::MatrixXd u = lowrank_factor(n, rank, rng);
  const Eigen::MatrixXd gram = u * u.transpose();
  ScoreMatrix s(n);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) s.set(i, j, gram(i, j) + (noise_sd > 0.0 ? noise_sd * rng.normal() : 0.0));
  return s;
}

}  // namespace pairint
