#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pairint/bandit/discovery.hpp"
#include "pairint/bandit/policy.hpp"
#include "pairint/bandit/posterior.hpp"
#include "pairint/synth.hpp"

using namespace pairint;

namespace {

RewardSamples samples_of(std::vector<Pair> actions, std::vector<std::vector<double>> rows) {
  RewardSamples s{std::move(actions), Eigen::MatrixXd(static_cast<Index>(rows.size()), static_cast<Index>(rows[0].size()))};
  for (std::size_t d = 0; d < rows.size(); ++d)
    for (std::size_t a = 0; a < rows[d].size(); ++a) s.values(static_cast<Index>(d), static_cast<Index>(a)) = rows[d][a];
  return s;
}

RewardSamples random_samples(Rng& rng, Index draws, Index actions) {
  std::vector<Pair> acts;
  for (const auto& p : all_pairs(20)) {
    if (static_cast<Index>(acts.size()) == actions) break;
    acts.push_back(p);
  }
  RewardSamples s{acts, Eigen::MatrixXd(draws, actions)};
  for (Index d = 0; d < draws; ++d)
    for (Index a = 0; a < actions; ++a) s.values(d, a) = rng.normal();
  return s;
}

PolicyConfig policy(PolicyKind kind, int batch) {
  PolicyConfig p;
  p.kind = kind;
  p.batch = batch;
  return p;
}

PosteriorHyperParams fast_hp(std::uint64_t seed) {
  PosteriorHyperParams hp;
  hp.rank = 3;
  hp.n_draws = 100;
  hp.burn_in = 30;
  hp.seed = seed;
  return hp;
}

double rmse_offdiag(const Eigen::MatrixXd& est, const ScoreMatrix& truth) {
  double ss = 0.0;
  int n = 0;
  for (const auto& p : all_pairs(truth.n())) {
    const double d = est(p.i, p.j) - truth.value(p);
    ss += d * d;
    ++n;
  }
  return std::sqrt(ss / n);
}

}  // namespace

TEST(Gibbs, PriorOnlyDrawsCentred) {
  PosteriorHyperParams hp;
  hp.rank = 5;
  hp.n_draws = 1000;
  hp.burn_in = 0;
  hp.seed = 3;
  const auto post = gibbs_posterior(ScoreMatrix(6), hp);
  ASSERT_EQ(post.size(), 1000u);
  // three standard errors of the draw average, per entry
  for (const auto& p : all_pairs(6)) {
    double sum = 0.0, sq = 0.0;
    for (std::size_t d = 0; d < post.size(); ++d) {
      const double v = post.entry(d, p.i, p.j);
      sum += v;
      sq += v * v;
    }
    const double k = static_cast<double>(post.size());
    const double mean = sum / k;
    const double se = std::sqrt((sq / k - mean * mean) * k / (k - 1.0) / k);
    EXPECT_LT(std::abs(mean), 3.0 * se) << p.i << "," << p.j;
    // an entry is a sum of rank products of independent N(0, prior_sd^2) terms;
    // 10% is about 3.5 standard errors of a sample sd at 1000 draws
    const double sd = std::sqrt(double(hp.rank)) * hp.prior_sd * hp.prior_sd;
    EXPECT_NEAR(se * std::sqrt(k), sd, 0.1 * sd);
  }
}

TEST(Gibbs, RecoversNoiselessRankOne) {
  const auto truth = gen_lowrank_reward(10, 1, 0.0, 4);
  PosteriorHyperParams hp;
  hp.rank = 3;
  hp.noise_sd = 0.01;
  hp.n_draws = 500;
  hp.seed = 5;
  EXPECT_LT(rmse_offdiag(gibbs_posterior(truth, hp).mean_reward(), truth), 0.1);
}

TEST(Gibbs, SingleObservationConditioning) {
  ScoreMatrix obs(4);
  obs.set(0, 1, 5.0);
  PosteriorHyperParams hp;
  hp.noise_sd = 0.1;
  hp.n_draws = 5000;
  hp.burn_in = 500;
  hp.seed = 6;
  const Eigen::MatrixXd mean = gibbs_posterior(obs, hp).mean_reward();
  EXPECT_NEAR(mean(0, 1), 5.0, 0.5);
  EXPECT_NEAR(mean(2, 3), 0.0, 0.5);
}

TEST(Gibbs, RowConditionalMatchesScalarAnalytic) {
  // m = 1, n = 3: u0 | u1, u2, R01, R02 is Gaussian with
  //   precision = 1/su^2 + (u1^2 + u2^2)/s^2, mean = (R01 u1 + R02 u2) / s^2 / precision.
  Eigen::MatrixXd u(3, 1);
  u << 0.0, 0.8, -1.3;
  const double su = 1.5, s = 0.7, r01 = 1.1, r02 = -0.4;
  const RowObservations obs{{1, r01}, {2, r02}};
  const double prec = 1.0 / (su * su) + (0.8 * 0.8 + 1.3 * 1.3) / (s * s);
  const double mean = (r01 * 0.8 + r02 * -1.3) / (s * s) / prec;
  const auto cond = row_conditional(u, obs, su, s);
  EXPECT_NEAR(cond.mean(0), mean, 1e-12);
  EXPECT_NEAR(cond.precision(0, 0), prec, 1e-12);

  Rng rng(7);
  double acc = 0.0, acc2 = 0.0;
  const int k = 50000;
  for (int t = 0; t < k; ++t) {
    const double x = sample_row(cond, rng)(0);
    acc += x;
    acc2 += x * x;
  }
  const double emp_mean = acc / k, emp_var = acc2 / k - emp_mean * emp_mean;
  EXPECT_NEAR(emp_mean, mean, 0.02 * std::abs(mean));
  EXPECT_NEAR(emp_var, 1.0 / prec, 0.02 / prec);
}

TEST(Gibbs, ChainsAndDeterminism) {
  const auto truth = gen_lowrank_reward(8, 2, 0.1, 1);
  auto hp = fast_hp(2);
  hp.chains = 3;
  const auto a = gibbs_posterior(truth, hp);
  const auto b = gibbs_posterior(truth, hp);
  ASSERT_EQ(a.size(), 100u);
  for (std::size_t d = 0; d < a.size(); ++d) EXPECT_EQ(a.factors[d], b.factors[d]);
  hp.thinning = 3;
  EXPECT_EQ(gibbs_posterior(truth, hp).size(), 100u);
}

TEST(Gibbs, Errors) {
  auto hp = fast_hp(0);
  hp.rank = 0;
  EXPECT_THROW(gibbs_posterior(ScoreMatrix(3), hp), ConfigError);
  hp = fast_hp(0);
  hp.noise_sd = 0.0;
  EXPECT_THROW(gibbs_posterior(ScoreMatrix(3), hp), ConfigError);
  hp = fast_hp(0);
  hp.thinning = 0;
  EXPECT_THROW(gibbs_posterior(ScoreMatrix(3), hp), ConfigError);
}

TEST(InstantRegret, SingleDrawArgmaxIsZero) {
  Rng rng(1);
  for (int t = 0; t < 50; ++t) {
    const auto s = random_samples(rng, 1, 12);
    const auto delta = instant_regret(s);
    EXPECT_EQ(std::count(delta.begin(), delta.end(), 0.0), 1);
    for (double v : delta) EXPECT_GE(v, 0.0);
  }
}

TEST(InstantRegret, TwoDrawHandAverage) {
  const auto s = samples_of({Pair(0, 1), Pair(0, 2)}, {{3, 1}, {1, 3}});
  EXPECT_EQ(instant_regret(s), (std::vector<double>{1.0, 1.0}));
}

TEST(InstantRegret, ShiftInvariantAndNonNegative) {
  Rng rng(2);
  for (int t = 0; t < 30; ++t) {
    auto s = random_samples(rng, 40, 15);
    const auto base = instant_regret(s);
    for (double v : base) EXPECT_GE(v, 0.0);
    s.values.array() += 3.0 * rng.normal();
    const auto shifted = instant_regret(s);
    for (std::size_t a = 0; a < base.size(); ++a) EXPECT_NEAR(shifted[a], base[a], 1e-12);
  }
}

TEST(ConditionalVariance, SingleGroupIsZero) {
  const auto s = samples_of({Pair(0, 1), Pair(0, 2)}, {{5, 1}, {6, 2}, {7, -1}});
  EXPECT_EQ(conditional_variance(s), (std::vector<double>{0.0, 0.0}));
}

TEST(ConditionalVariance, TwoGroupsHandComputed) {
  // Columns: a, p, q. Draws 1-2 have argmax p, draws 3-4 argmax q;
  // R(a) group means 1.0 and 3.0.
  const auto s = samples_of({Pair(0, 1), Pair(0, 2), Pair(0, 3)},
                            {{0.5, 10, 0}, {1.5, 10, 0}, {2.5, 0, 10}, {3.5, 0, 10}});
  EXPECT_NEAR(conditional_variance(s)[0], 1.0, 1e-15);
}

TEST(ConditionalVariance, BoundedByTotalVariance) {
  Rng rng(3);
  for (int t = 0; t < 30; ++t) {
    const auto s = random_samples(rng, 60, 10);
    const auto v = conditional_variance(s);
    for (Index a = 0; a < s.size(); ++a) {
      const auto col = s.values.col(a);
      const double total = (col.array() - col.mean()).square().mean();
      EXPECT_GE(v[static_cast<std::size_t>(a)], 0.0);
      EXPECT_LE(v[static_cast<std::size_t>(a)], total + 1e-12);
    }
  }
}

TEST(InformationRatio, OrderingConventions) {
  const auto psi = information_ratio({0.0, 2.0, 1.0, 0.0}, {0.0, 0.0, 4.0, 1.0}, 2.0);
  EXPECT_EQ(psi[0], 0.0);
  EXPECT_TRUE(std::isinf(psi[1]));
  EXPECT_EQ(psi[2], 0.25);
  EXPECT_EQ(psi[3], 0.0);
}

TEST(SelectBatch, UnanimousPosteriorPicksDominantPairFirst) {
  Rng rng(4);
  auto s = random_samples(rng, 30, 8);
  s.values.col(5).array() += 100.0;
  for (auto kind : {PolicyKind::Ids, PolicyKind::Ts, PolicyKind::Ucb}) {
    const auto batch = select_batch(policy(kind, 3), s, rng);
    ASSERT_EQ(batch.size(), 3u);
    EXPECT_EQ(batch[0], s.actions[5]) << to_string(kind);
  }
}

TEST(SelectBatch, IdsPrefersZeroRegretPair) {
  // (0,2) is the argmax of every draw, so its Delta is 0.
  const auto s = samples_of({Pair(0, 1), Pair(0, 2), Pair(0, 3)}, {{1, 9, 8}, {2, 9, 0}, {0, 9, 3}});
  Rng rng(1);
  EXPECT_EQ(select_batch(policy(PolicyKind::Ids, 1), s, rng)[0], Pair(0, 2));
}

TEST(SelectBatch, UcbWithZeroBetaIsGreedyOnMean) {
  Rng rng(5);
  const auto s = random_samples(rng, 25, 12);
  auto p = policy(PolicyKind::Ucb, 12);
  p.beta = 0.0;
  const auto batch = select_batch(p, s, rng);
  const Eigen::RowVectorXd mean = s.values.colwise().mean();
  for (std::size_t k = 1; k < batch.size(); ++k) {
    const auto ia = std::find(s.actions.begin(), s.actions.end(), batch[k - 1]) - s.actions.begin();
    const auto ib = std::find(s.actions.begin(), s.actions.end(), batch[k]) - s.actions.begin();
    EXPECT_GE(mean(ia), mean(ib));
  }
}

TEST(SelectBatch, DistinctAndValidated) {
  Rng rng(6);
  const auto s = random_samples(rng, 3, 9);
  for (auto kind : {PolicyKind::Ids, PolicyKind::Ts, PolicyKind::Ucb, PolicyKind::Us, PolicyKind::Random}) {
    const auto batch = select_batch(policy(kind, 7), s, rng);
    EXPECT_EQ(std::set<Pair>(batch.begin(), batch.end()).size(), 7u) << to_string(kind);
  }
  EXPECT_THROW(select_batch(policy(PolicyKind::Ids, 10), s, rng), ConfigError);
  EXPECT_THROW(select_batch(policy(PolicyKind::Oracle, 1), s, rng), ConfigError);
}

TEST(SelectBatch, PolicyNamesRoundTrip) {
  for (auto kind : {PolicyKind::Ids, PolicyKind::Ts, PolicyKind::Ucb, PolicyKind::Us, PolicyKind::Random, PolicyKind::Oracle})
    EXPECT_EQ(policy_kind_from_string(to_string(kind)), kind);
  EXPECT_THROW(policy_kind_from_string("greedy"), ConfigError);
  auto p = policy(PolicyKind::Ids, 1);
  p.lambda = 0.5;
  EXPECT_THROW(p.validate(), ConfigError);
}

TEST(Metrics, TopPercentileSize) {
  const auto truth = gen_lowrank_reward(50, 5, 0.0, 1);
  EXPECT_EQ(top_percentile_pairs(truth, 5.0).size(), 62u);
  EXPECT_THROW(top_percentile_pairs(truth, 0.0), ConfigError);
  EXPECT_THROW(top_percentile_pairs(truth, 100.0), ConfigError);
}

TEST(Metrics, SaturationAndEmptyRelations) {
  const auto truth = gen_lowrank_reward(8, 2, 0.0, 2);
  DiscoveryState st = DiscoveryState::initial(8);
  int round = 1;
  for (const auto& p : all_pairs(8)) {
    st.history.push_back({round, p, truth.value(p)});
    st.remaining.erase(p);
    if (st.history.size() % 4 == 0) ++round;
  }
  const RelationSet rel{Pair(0, 1), Pair(2, 5), Pair(3, 7)};
  const auto m = compute_metrics(st, truth, rel, 10.0);
  EXPECT_EQ(m.recovery.back(), 1.0);
  EXPECT_EQ(m.known_count.back(), 3);
  EXPECT_NEAR(m.cumulative_regret.back(), 0.0, 1e-12);
  const auto empty = compute_metrics(st, truth, {}, 10.0);
  for (int k : empty.known_count) EXPECT_EQ(k, 0);
}

TEST(Discovery, OracleHasZeroRegret) {
  const auto env = gen_lowrank_reward(20, 3, 0.0, 3);
  Rng rng(1);
  DiscoveryOptions opt;
  opt.rounds = 15;
  const auto run = run_discovery(env, policy(PolicyKind::Oracle, 10), fast_hp(1), opt, rng);
  for (double r : run.metrics.cumulative_regret) EXPECT_NEAR(r, 0.0, 1e-12);
}

TEST(Discovery, RandomRecoveryTracksRevealedFraction) {
  double mean = 0.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto env = gen_lowrank_reward(50, 5, 0.0, 100 + seed);
    Rng rng(seed);
    DiscoveryOptions opt;
    opt.rounds = 49;
    mean += run_discovery(env, policy(PolicyKind::Random, 10), fast_hp(seed), opt, rng).metrics.recovery.back() / 10.0;
  }
  EXPECT_NEAR(mean, 490.0 / 1225.0, 0.1);
}

TEST(Discovery, RegretDecompositionAndMonotoneSeries) {
  const auto env = gen_lowrank_reward(15, 3, 0.05, 4);
  Rng rng(2);
  DiscoveryOptions opt;
  opt.rounds = 8;
  opt.relations = {Pair(0, 1), Pair(4, 9), Pair(2, 3)};
  const auto run = run_discovery(env, policy(PolicyKind::Ids, 5), fast_hp(3), opt, rng);
  std::vector<double> sorted;
  for (const auto& p : all_pairs(15)) sorted.push_back(env.value(p));
  std::sort(sorted.rbegin(), sorted.rend());
  double oracle = 0.0, got = 0.0;
  for (int r = 1; r <= 8; ++r) {
    for (int k = 0; k < 5; ++k) oracle += sorted[static_cast<std::size_t>((r - 1) * 5 + k)];
    for (const auto& o : run.state.history)
      if (o.round == r) got += o.score;
    EXPECT_NEAR(run.metrics.cumulative_regret[static_cast<std::size_t>(r - 1)], oracle - got, 1e-12);
    if (r > 1) {
      EXPECT_GE(run.metrics.recovery[r - 1], run.metrics.recovery[r - 2]);
      EXPECT_GE(run.metrics.known_count[r - 1], run.metrics.known_count[r - 2]);
    }
  }
  EXPECT_EQ(run.state.history.size(), 40u);
  EXPECT_EQ(run.state.remaining.size(), 105u - 40u);
}

TEST(Discovery, BitReproducible) {
  const auto env = gen_lowrank_reward(12, 2, 0.1, 5);
  DiscoveryOptions opt;
  opt.rounds = 5;
  for (auto kind : {PolicyKind::Ids, PolicyKind::Ts, PolicyKind::Random}) {
    Rng a(9), b(9);
    const auto x = run_discovery(env, policy(kind, 4), fast_hp(4), opt, a);
    const auto y = run_discovery(env, policy(kind, 4), fast_hp(4), opt, b);
    ASSERT_EQ(x.state.history.size(), y.state.history.size());
    for (std::size_t k = 0; k < x.state.history.size(); ++k) {
      EXPECT_EQ(x.state.history[k].pair, y.state.history[k].pair);
      EXPECT_EQ(x.state.history[k].score, y.state.history[k].score);
    }
    EXPECT_EQ(x.metrics.cumulative_regret, y.metrics.cumulative_regret);
  }
}

TEST(Discovery, BudgetChecked) {
  const auto env = gen_lowrank_reward(5, 2, 0.0, 1);
  Rng rng(1);
  DiscoveryOptions opt;
  opt.rounds = 3;
  EXPECT_THROW(run_discovery(env, policy(PolicyKind::Random, 4), fast_hp(1), opt, rng), ConfigError);
  ScoreMatrix partial(5);
  partial.set(0, 1, 1.0);
  EXPECT_THROW(run_discovery(partial, policy(PolicyKind::Random, 1), fast_hp(1), opt, rng), DataError);
}

TEST(Discovery, IdsOutperformsRandomOnSmallProblem) {
  double ids = 0.0, rnd = 0.0;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto env = gen_lowrank_reward(20, 3, 0.0, 50 + seed);
    DiscoveryOptions opt;
    opt.rounds = 8;
    Rng a(seed), b(seed);
    auto hp = fast_hp(seed);
    hp.n_draws = 200;
    ids += run_discovery(env, policy(PolicyKind::Ids, 5), hp, opt, a).metrics.recovery.back();
    rnd += run_discovery(env, policy(PolicyKind::Random, 5), hp, opt, b).metrics.recovery.back();
  }
  EXPECT_GT(ids, rnd);
}
