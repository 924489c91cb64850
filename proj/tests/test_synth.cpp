#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "pairint/ratio/separability.hpp"
#include "pairint/synth.hpp"
#include "test_util.hpp"

using namespace pairint;

namespace {

// Undo each layer: leaky-ReLU inverse, then a linear solve.
RowMatrix invert(const RandomMlp& g, const RowMatrix& x) {
  Eigen::MatrixXd a = x.transpose();
  for (std::size_t l = g.layers.size(); l-- > 0;) {
    if (l + 1 < g.layers.size())
      a = a.unaryExpr([s = g.leaky_slope](double v) { return v > 0.0 ? v : v / s; });
    a.colwise() -= g.layers[l].bias;
    a = g.layers[l].weight.fullPivLu().solve(a);
  }
  return a.transpose();
}

Vector mean_of(const ExperimentDataset& ds, const Condition& c) { return ds.at(c).mean(); }

}  // namespace

TEST(SeparableGenerator, DefaultShape) {
  const auto ds = gen_separable_tabular(SeparableSpec{});
  EXPECT_EQ(ds.samples().size(), 11u);
  EXPECT_EQ(ds.dim(), 3);
  for (const auto& [c, m] : ds.samples()) EXPECT_EQ(m.rows(), 20000) << c.to_string();
  EXPECT_EQ(ds.ground_truth_pairs(), (std::vector<Pair>{Pair(0, 1), Pair(2, 3)}));
  EXPECT_EQ(ds.names(), (std::vector<std::string>{"A", "B", "C", "D"}));
}

TEST(SeparableGenerator, IdentityMapLatentMeans) {
  SeparableSpec spec;
  spec.mlp_depth = 0;
  const auto ds = gen_separable_tabular(spec);
  const auto expect = [&](const Condition& c, double a, double b, double d) {
    const Vector m = mean_of(ds, c);
    EXPECT_NEAR(m(0), a, 0.05) << c.to_string();
    EXPECT_NEAR(m(1), b, 0.05) << c.to_string();
    EXPECT_NEAR(m(2), d, 0.05) << c.to_string();
  };
  expect(Condition::control(), 0, 0, 0);
  expect(Condition::single(0), 3, 0, 0);
  expect(Condition::pair(0, 1), 3, 3, 0);
  expect(Condition::single(3), 0, 0, 3);
  expect(Condition::pair(1, 2), 3, 3, 3);
}

TEST(SeparableGenerator, OracleKls) {
  EXPECT_EQ(separable::oracle_kl(Condition::control()), 0.0);
  EXPECT_EQ(separable::oracle_kl(Condition::single(0)), 4.5);
  EXPECT_EQ(separable::oracle_kl(Condition::single(1)), 9.0);
  EXPECT_EQ(separable::oracle_kl(Condition::pair(0, 1)), 9.0);
  EXPECT_EQ(separable::oracle_kl(Condition::pair(0, 2)), 9.0);
  for (const auto& p : all_pairs(4)) {
    const bool inseparable = p == Pair(0, 1) || p == Pair(2, 3);
    EXPECT_EQ(separable::oracle_score(p.i, p.j), inseparable ? 4.5 : 0.0);
  }
}

TEST(SeparableGenerator, Deterministic) {
  SeparableSpec spec;
  spec.n_per_class = 200;
  spec.seed = 9;
  const auto a = gen_separable_tabular(spec);
  const auto b = gen_separable_tabular(spec);
  for (const auto& [c, m] : a.samples()) EXPECT_EQ(m.data(), b.at(c).data());
  spec.seed = 10;
  EXPECT_NE(gen_separable_tabular(spec).at(Condition::control()).data(), a.at(Condition::control()).data());
}

TEST(SeparableGenerator, RankingSurvivesRandomDiffeomorphisms) {
  for (std::uint64_t seed : {0u, 1u, 2u}) {
    SeparableSpec spec;
    spec.seed = seed;
    const auto ds = gen_separable_tabular(spec);
    SeparabilityScorer scorer(ds, KnnEstimator{5});
    std::vector<std::pair<double, Pair>> ranked;
    for (const auto& p : all_pairs(4)) ranked.emplace_back(scorer.score(p.i, p.j).score, p);
    std::sort(ranked.rbegin(), ranked.rend());
    const std::set<Pair> top{ranked[0].second, ranked[1].second};
    EXPECT_EQ(top, (std::set<Pair>{Pair(0, 1), Pair(2, 3)})) << "seed " << seed;
  }
}

TEST(RandomMlp, ZeroDepthIsIdentity) {
  Rng rng(1);
  const auto g = RandomMlp::random(3, 0, 0.2, rng);
  const auto z = pairint::testing::gaussian_samples(rng, 10, 3);
  EXPECT_EQ(apply_diffeomorphism(g, z).data(), z.data());
}

TEST(RandomMlp, LayersSquareAndNonsingular) {
  Rng rng(2);
  const auto g = RandomMlp::random(3, 10, 0.2, rng);
  ASSERT_EQ(g.layers.size(), 10u);
  for (const auto& l : g.layers) {
    EXPECT_EQ(l.weight.rows(), 3);
    EXPECT_EQ(l.weight.cols(), 3);
    EXPECT_GT(std::abs(l.weight.determinant()), 1e-9);
  }
}

TEST(RandomMlp, LayerwiseInversionRecoversLatents) {
  Rng rng(3);
  for (int depth : {1, 7, 10}) {
    const auto g = RandomMlp::random(3, depth, 0.2, rng);
    const auto z = pairint::testing::gaussian_samples(rng, 100, 3, 0.0, 3.0);
    const RowMatrix back = invert(g, apply_diffeomorphism(g, z).data());
    EXPECT_LT((back - z.data()).cwiseAbs().maxCoeff(), 1e-6) << "depth " << depth;
  }
}

TEST(RandomMlp, Injective) {
  Rng rng(4);
  const auto g = RandomMlp::random(3, 7, 0.2, rng);
  const auto z = pairint::testing::gaussian_samples(rng, 1000, 3);
  const auto x = apply_diffeomorphism(g, z);
  std::set<std::vector<double>> seen;
  for (Index r = 0; r < x.rows(); ++r) seen.insert({x.data()(r, 0), x.data()(r, 1), x.data()(r, 2)});
  EXPECT_EQ(seen.size(), 1000u);
}

TEST(RandomMlp, Errors) {
  Rng rng(5);
  EXPECT_THROW(RandomMlp::random(3, -1, 0.2, rng), ConfigError);
  EXPECT_THROW(RandomMlp::random(3, 2, 1.0, rng), ConfigError);
  const auto g = RandomMlp::random(3, 2, 0.2, rng);
  EXPECT_THROW(apply_diffeomorphism(g, pairint::testing::gaussian_samples(rng, 5, 2)), DataError);
}

TEST(MixtureGenerator, DefaultShape) {
  MixtureSpec spec;
  spec.n_per_class = 100;
  const auto ds = gen_disjoint_mixture(spec);
  EXPECT_EQ(ds.samples().size(), 29u);
  EXPECT_EQ(ds.dim(), 3);
  EXPECT_EQ(ds.ground_truth_pairs(), (std::vector<Pair>{Pair(3, 4), Pair(5, 6)}));
}

TEST(MixtureGenerator, ControlWeightsRecoveredByCounting) {
  Rng rng(6);
  const auto lat = mixture::sample_latent(Condition::control(), 20000, rng);
  std::vector<double> freq(6, 0.0);
  for (int k : lat.component) freq[static_cast<std::size_t>(k)] += 1.0 / 20000.0;
  for (std::size_t k = 0; k < 6; ++k) EXPECT_NEAR(freq[k], mixture::kWeights[k], 0.01) << k;
}

TEST(MixtureGenerator, WeightsNeverPerturbed) {
  for (const auto& c : all_conditions(7)) {
    Rng a(7), b(7);
    const auto x = mixture::sample_latent(c, 500, a);
    const auto y = mixture::sample_latent(Condition::control(), 500, b);
    EXPECT_EQ(x.component, y.component) << c.to_string();
  }
}

TEST(MixtureGenerator, DOnlyChangesComponentFour) {
  Rng a(8), b(8);
  const auto d = mixture::sample_latent(Condition::single(3), 40000, a);
  const auto c = mixture::sample_latent(Condition::control(), 40000, b);
  for (int k = 0; k < 6; ++k) {
    double sd = 0.0, sc = 0.0;
    int n = 0;
    for (std::size_t r = 0; r < d.values.size(); ++r) {
      if (d.component[r] != k) continue;
      sd += d.values[r] * d.values[r];
      sc += c.values[r] * c.values[r];
      ++n;
    }
    if (k == 4) {
      EXPECT_NEAR(sd / n, 25.0, 1.0);
      EXPECT_NEAR(sc / n, 1.0, 0.05);
    } else {
      EXPECT_NEAR(sd / n, sc / n, 0.1) << k;
    }
  }
}

TEST(MixtureGenerator, ComponentTables) {
  using F = mixture::Component::Family;
  const auto de = mixture::components({3, 4});
  EXPECT_EQ(de[4].location, 10.0);
  EXPECT_EQ(de[4].scale, 5.0);
  const auto fg = mixture::components({5, 6});
  EXPECT_EQ(fg[5].family, F::Cauchy);
  EXPECT_EQ(fg[5].location, 20.0);
  const auto ad = mixture::components({0, 3});
  EXPECT_EQ(ad[1].location, 5.0);
  EXPECT_EQ(ad[4].location, 0.0);
  EXPECT_EQ(ad[4].scale, 5.0);
  for (const auto& c : mixture::components({})) {
    EXPECT_EQ(c.family, F::Normal);
    EXPECT_EQ(c.location, 0.0);
    EXPECT_EQ(c.scale, 1.0);
  }
}

TEST(MixtureGenerator, DisjointChildrenSatisfyMixtureIdentityInLatent) {
  // For pairs touching distinct components, p_ij + p_0 = p_i + p_j componentwise.
  for (const auto& p : all_pairs(7)) {
    if (p == Pair(3, 4) || p == Pair(5, 6)) continue;
    const auto c0 = mixture::components({});
    const auto ci = mixture::components({p.i});
    const auto cj = mixture::components({p.j});
    const auto cij = mixture::components({p.i, p.j});
    for (std::size_t k = 0; k < 6; ++k) {
      const bool i_moves = ci[k].location != c0[k].location || ci[k].scale != c0[k].scale || ci[k].family != c0[k].family;
      const auto& expect = i_moves ? ci[k] : cj[k];
      EXPECT_EQ(cij[k].location, expect.location);
      EXPECT_EQ(cij[k].scale, expect.scale);
      EXPECT_EQ(cij[k].family, expect.family);
    }
  }
}

TEST(LowRank, FullRankWhenRankEqualsN) {
  const auto s = gen_lowrank_reward(6, 6, 0.0, 1);
  Rng rng(1);
  const Eigen::MatrixXd u = lowrank_factor(6, 6, rng);
  const Eigen::MatrixXd gram = u * u.transpose();
  Eigen::FullPivLU<Eigen::MatrixXd> lu(gram);
  lu.setThreshold(1e-8);
  EXPECT_EQ(lu.rank(), 6);
  for (int i = 0; i < 6; ++i)
    for (int j = i + 1; j < 6; ++j) EXPECT_EQ(s.value(i, j), gram(i, j));
}

TEST(LowRank, RankOneMinorsVanish) {
  const auto s = gen_lowrank_reward(8, 1, 0.0, 2);
  for (int i = 0; i < 8; ++i)
    for (int k = 0; k < 8; ++k)
      for (int j = 0; j < 8; ++j)
        for (int l = 0; l < 8; ++l) {
          if (i == j || k == l || i == l || k == j) continue;
          const double minor = s.value(i, j) * s.value(k, l) - s.value(i, l) * s.value(k, j);
          const double scale = 1.0 + std::abs(s.value(i, j) * s.value(k, l));
          EXPECT_LT(std::abs(minor), 1e-8 * scale);
        }
}

TEST(LowRank, DeterministicAndValidated) {
  EXPECT_EQ(gen_lowrank_reward(10, 3, 0.1, 5), gen_lowrank_reward(10, 3, 0.1, 5));
  EXPECT_FALSE(gen_lowrank_reward(10, 3, 0.1, 5) == gen_lowrank_reward(10, 3, 0.1, 6));
  EXPECT_TRUE(gen_lowrank_reward(10, 3, 0.1, 5).fully_observed());
  EXPECT_THROW(gen_lowrank_reward(5, 0, 0.0, 1), ConfigError);
  EXPECT_THROW(gen_lowrank_reward(5, 6, 0.0, 1), ConfigError);
  EXPECT_THROW(gen_lowrank_reward(5, 2, -1.0, 1), ConfigError);
}

TEST(LowRank, EntriesHaveUnitVariance) {
  double ss = 0.0;
  int n = 0;
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const auto s = gen_lowrank_reward(30, 5, 0.0, seed);
    for (const auto& p : s.observed_pairs()) {
      ss += s.value(p.i, p.j) * s.value(p.i, p.j);
      ++n;
    }
  }
  EXPECT_NEAR(ss / n, 1.0, 0.1);
}
