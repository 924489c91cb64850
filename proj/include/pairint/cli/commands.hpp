#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "pairint/bandit/discovery.hpp"
#include "pairint/core/error.hpp"
#include "pairint/core/io.hpp"
#include "pairint/disjoint.hpp"
#include "pairint/ratio/separability.hpp"
#include "pairint/synth.hpp"

namespace pairint::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumeric = 4;

inline constexpr const char* kWorkersEnv = "PAIRINT_WORKERS";
inline constexpr int kDescriptorVersion = 1;

/// PAIRINT_WORKERS if set to a positive integer, else the hardware thread count.
inline int default_workers() {
  if (const char* env = std::getenv(kWorkersEnv)) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || v < 1) throw ConfigError(std::string(kWorkersEnv) + " must be a positive integer");
    return static_cast<int>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs f(0..count-1) on up to `workers` threads. Results must be written by
/// index; the exception of the lowest failing index is rethrown.
template <typename F>
void parallel_for(std::size_t count, int workers, F&& f) {
  const auto n_threads = std::min<std::size_t>(static_cast<std::size_t>(std::max(workers, 1)), count);
  if (n_threads <= 1) {
    for (std::size_t k = 0; k < count; ++k) f(k);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::mutex mu;
  std::optional<std::size_t> failed_at;
  std::exception_ptr failure;
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < n_threads; ++t)
    pool.emplace_back([&] {
      for (std::size_t k; (k = next++) < count;) {
        try {
          f(k);
        } catch (...) {
          std::lock_guard lock(mu);
          if (!failed_at || k < *failed_at) {
            failed_at = k;
            failure = std::current_exception();
          }
        }
      }
    });
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

// ---------------------------------------------------------------------------
// Configuration: defaults < config file < flags. Keys absent from the defaults
// are rejected; a null default accepts any value of the expected kind.

namespace detail {

inline bool same_kind(const json& expected, const json& got) {
  if (expected.is_null() || got.is_null()) return true;
  if (expected.is_number()) {
    if (expected.is_number_float()) return got.is_number();
    return got.is_number_integer() || got.is_number_unsigned();
  }
  return expected.type() == got.type();
}

inline void overlay(json& base, const json& layer, const std::string& where) {
  if (!layer.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, value] : layer.items()) {
    if (!base.contains(key)) throw ConfigError("unknown config key '" + where + key + "'");
    json& slot = base[key];
    if (slot.is_object() && value.is_object()) {
      overlay(slot, value, where + key + ".");
      continue;
    }
    if (!same_kind(slot, value)) throw ConfigError("config key '" + where + key + "' has the wrong type");
    slot = value;
  }
}

}  // namespace detail

/// Reads a config file. A descriptor written by a previous run is accepted too
/// (its "config" member is used, after checking the command matches).
inline json read_config_file(const fs::path& path, const std::string& command) {
  json j;
  try {
    j = json::parse(io::read_file(path));
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
  if (j.is_object() && j.contains("descriptor_version")) {
    if (j.value("command", "") != command)
      throw ConfigError("descriptor " + path.string() + " belongs to command '" + j.value("command", "") + "'");
    return j.at("config");
  }
  return j;
}

inline json resolve_config(json defaults, const std::optional<fs::path>& file, json flags, const std::string& command) {
  json layers[2] = {file ? read_config_file(*file, command) : json::object(), std::move(flags)};
  for (auto& layer : layers) {
    // a single name is shorthand for a one-element list
    for (const char* key : {"stat", "policy"})
      if (layer.is_object() && defaults.contains(key) && layer.contains(key) && layer[key].is_string())
        layer[key] = json::array({layer[key]});
    detail::overlay(defaults, layer, "");
  }
  return defaults;
}

inline std::string require_string(const json& cfg, const char* key, const std::string& command) {
  if (!cfg.contains(key) || cfg[key].is_null()) throw ConfigError(command + ": '" + key + "' is required");
  if (!cfg[key].is_string()) throw ConfigError(command + ": '" + key + "' must be a string");
  return cfg[key].get<std::string>();
}

inline int positive_int(const json& cfg, const char* key) {
  const auto v = cfg.at(key).get<long long>();
  if (v < 1) throw ConfigError(std::string("'") + key + "' must be positive");
  return static_cast<int>(v);
}

inline void write_descriptor(const fs::path& dir, const std::string& command, const json& cfg) {
  json d;
  d["descriptor_version"] = kDescriptorVersion;
  d["command"] = command;
  d["config"] = cfg;
  io::write_file_atomic(dir / "descriptor.json", d.dump(2) + "\n");
}

inline std::string pair_label(const ExperimentDataset& ds, const Pair& p) {
  if (ds.names().empty()) return std::to_string(p.i) + "-" + std::to_string(p.j);
  return ds.names()[static_cast<std::size_t>(p.i)] + "-" + ds.names()[static_cast<std::size_t>(p.j)];
}

/// "i,j" -> Pair
inline Pair parse_pair(const std::string& text) {
  const auto parts = io::split(text, ',');
  if (parts.size() != 2) throw ConfigError("pair '" + text + "' must look like i,j");
  int v[2];
  for (int k = 0; k < 2; ++k) {
    const auto d = io::parse_double(parts[static_cast<std::size_t>(k)]);
    if (!d || *d != std::floor(*d) || *d < 0) throw ConfigError("pair '" + text + "' must hold non-negative integers");
    v[k] = static_cast<int>(*d);
  }
  if (v[0] == v[1]) throw ConfigError("pair '" + text + "' repeats a perturbation");
  return Pair(v[0], v[1]);
}

// ---------------------------------------------------------------------------
// synth

inline json synth_defaults() {
  return {{"kind", "separable"}, {"seed", 0},       {"n", nullptr},      {"mlp_depth", nullptr},
          {"leaky_slope", 0.2},  {"out", nullptr},  {"perturbations", 50}, {"rank", 5},
          {"noise_sd", 0.0}};
}

inline int cmd_synth(const json& cfg, std::ostream& out) {
  const auto kind = cfg.at("kind").get<std::string>();
  const fs::path dir = require_string(cfg, "out", "synth");
  const auto seed = cfg.at("seed").get<std::uint64_t>();
  if (kind == "separable" || kind == "mixture") {
    const int n = cfg["n"].is_null() ? 20000 : positive_int(cfg, "n");
    const double slope = cfg.at("leaky_slope").get<double>();
    if (!cfg["mlp_depth"].is_null() && cfg["mlp_depth"].get<long long>() < 0)
      throw ConfigError("'mlp_depth' must be non-negative");
    std::optional<ExperimentDataset> ds;
    if (kind == "separable") {
      SeparableSpec spec;
      spec.n_per_class = n;
      spec.mlp_depth = cfg["mlp_depth"].is_null() ? spec.mlp_depth : cfg["mlp_depth"].get<int>();
      spec.leaky_slope = slope;
      spec.seed = seed;
      ds.emplace(gen_separable_tabular(spec));
    } else {
      MixtureSpec spec;
      spec.n_per_class = n;
      spec.mlp_depth = cfg["mlp_depth"].is_null() ? spec.mlp_depth : cfg["mlp_depth"].get<int>();
      spec.leaky_slope = slope;
      spec.seed = seed;
      ds.emplace(gen_disjoint_mixture(spec));
    }
    io::dataset_save(*ds, dir);
    out << "wrote " << ds->samples().size() << " conditions x " << n << " samples (dim " << ds->dim() << ") to "
        << (dir / "manifest.json").string() << "\n";
    out << "ground truth pairs:";
    for (const auto& p : ds->ground_truth_pairs()) out << " " << pair_label(*ds, p);
    out << "\n";
  } else if (kind == "lowrank") {
    const int n = positive_int(cfg, "perturbations");
    const auto truth = gen_lowrank_reward(n, positive_int(cfg, "rank"), cfg.at("noise_sd").get<double>(), seed);
    io::write_score_matrix(truth, dir / "truth.csv");
    out << "wrote " << n << "x" << n << " reward matrix to " << (dir / "truth.csv").string() << "\n";
  } else {
    throw ConfigError("unknown synth kind '" + kind + "' (expected separable, mixture or lowrank)");
  }
  write_descriptor(dir, "synth", cfg);
  return kExitOk;
}

// ---------------------------------------------------------------------------
// score

inline const std::vector<std::string>& score_stats() {
  static const std::vector<std::string> stats{"separability-knn", "separability-nre-smile", "disjointedness-rbf",
                                              "disjointedness-matern", "embedding-residual"};
  return stats;
}

inline json score_defaults() {
  const NreTrainConfig nre;
  return {{"data", nullptr},
          {"stat", json::array({"separability-knn"})},
          {"pairs", nullptr},
          {"out", nullptr},
          {"seed", 0},
          {"k", 5},
          {"tau", 5.0},
          {"bandwidth", nullptr},
          {"embeddings", nullptr},
          {"nre",
           {{"epochs", nre.epochs},
            {"step_size", nre.step_size},
            {"batch_size", nre.batch_size},
            {"hidden_sizes", nre.hidden_sizes},
            {"embedding_dim", nre.embedding_dim}}}};
}

inline std::vector<Pair> requested_pairs(const json& cfg, const ExperimentDataset& ds) {
  if (cfg["pairs"].is_null()) return ds.available_pairs();
  std::vector<Pair> pairs;
  for (const auto& e : cfg["pairs"]) {
    if (e.is_string()) {
      pairs.push_back(parse_pair(e.get<std::string>()));
    } else if (e.is_array() && e.size() == 2 && e[0].is_number_integer() && e[1].is_number_integer()) {
      if (e[0].get<int>() == e[1].get<int>()) throw ConfigError("pair repeats a perturbation");
      pairs.emplace_back(e[0].get<int>(), e[1].get<int>());
    } else {
      throw ConfigError("'pairs' entries must be [i, j] or \"i,j\"");
    }
  }
  std::sort(pairs.begin(), pairs.end());
  pairs.erase(std::unique(pairs.begin(), pairs.end()), pairs.end());
  for (const auto& p : pairs)
    if (p.j >= ds.n_perturbations())
      throw ConfigError("pair " + std::to_string(p.i) + "," + std::to_string(p.j) + " exceeds n_perturbations");
  return pairs;
}

inline void require_conditions(const ExperimentDataset& ds, const std::vector<Pair>& pairs) {
  std::vector<std::string> missing;
  std::set<Condition> reported;
  for (const auto& p : pairs)
    for (const auto& c : {Condition::single(p.i), Condition::single(p.j), Condition::pair(p)})
      if (!ds.contains(c) && reported.insert(c).second) missing.push_back(c.to_string());
  if (missing.empty()) return;
  std::string msg = "dataset lacks conditions required by the requested pairs:";
  for (const auto& m : missing) msg += " " + m;
  throw DataError(msg);
}

inline json separability_diag(const Pair& p, const SeparabilityResult& r) {
  return {{"i", p.i}, {"j", p.j}, {"score", r.score}, {"kl_i", r.kl_i}, {"kl_j", r.kl_j}, {"kl_ij", r.kl_ij}};
}

inline int cmd_score(const json& cfg, int workers, std::ostream& out) {
  const fs::path data = require_string(cfg, "data", "score");
  const fs::path dir = require_string(cfg, "out", "score");
  std::vector<std::string> stats;
  for (const auto& s : cfg.at("stat")) {
    if (!s.is_string()) throw ConfigError("'stat' entries must be strings");
    const auto name = s.get<std::string>();
    if (std::find(score_stats().begin(), score_stats().end(), name) == score_stats().end())
      throw ConfigError("unknown statistic '" + name + "'");
    if (std::find(stats.begin(), stats.end(), name) == stats.end()) stats.push_back(name);
  }
  if (stats.empty()) throw ConfigError("score: no statistic requested");
  const auto seed = cfg.at("seed").get<std::uint64_t>();
  const int k = positive_int(cfg, "k");
  const double tau = cfg.at("tau").get<double>();
  if (!(tau > 0.0)) throw ConfigError("'tau' must be positive");
  std::optional<double> bandwidth;
  if (!cfg["bandwidth"].is_null()) {
    bandwidth = cfg["bandwidth"].get<double>();
    if (!(*bandwidth > 0.0)) throw ConfigError("'bandwidth' must be positive");
  }
  NreTrainConfig nre;
  const auto& nj = cfg.at("nre");
  nre.epochs = nj.at("epochs").get<int>();
  nre.step_size = nj.at("step_size").get<double>();
  nre.batch_size = nj.at("batch_size").get<int>();
  nre.hidden_sizes = nj.at("hidden_sizes").get<std::vector<int>>();
  nre.embedding_dim = nj.at("embedding_dim").get<int>();
  nre.seed = seed;
  nre.validate();

  const auto ds = io::dataset_load(data);
  const auto pairs = requested_pairs(cfg, ds);
  if (pairs.empty()) throw DataError("score: no pairs to score (dataset has no double conditions)");
  require_conditions(ds, pairs);

  for (const auto& stat : stats) {
    ScoreMatrix matrix(ds.n_perturbations());
    std::vector<json> diag(pairs.size());
    json extra = json::object();
    if (stat == "separability-knn" || stat == "separability-nre-smile") {
      std::optional<SeparabilityScorer> scorer;
      if (stat == "separability-knn") {
        scorer.emplace(ds, KnnEstimator{k});
      } else {
        NreSmileEstimator est{nre, tau};
        Rng rng(seed);
        RatioModel model = nre_train(ds, nre, rng);
        const fs::path model_path = dir / "separability-nre-smile.model.json";
        io::write_file_atomic(model_path, ratio_model_to_json(model).dump() + "\n");
        extra["model"] = model_path.filename().string();
        extra["final_epoch_accuracy"] = model.log.empty() ? 0.0 : model.log.back().accuracy;
        scorer.emplace(ds, est, std::move(model), seed);
      }
      std::set<Condition> needed;
      for (const auto& p : pairs) needed.insert({Condition::single(p.i), Condition::single(p.j), Condition::pair(p)});
      const std::vector<Condition> conds(needed.begin(), needed.end());
      parallel_for(conds.size(), workers, [&](std::size_t c) { scorer->kl_from_control(conds[c]); });
      for (std::size_t a = 0; a < pairs.size(); ++a) {
        const auto r = scorer->score(pairs[a].i, pairs[a].j);
        matrix.set(pairs[a], r.score);
        diag[a] = separability_diag(pairs[a], r);
      }
    } else if (stat == "disjointedness-rbf" || stat == "disjointedness-matern") {
      const KernelSpec spec{stat == "disjointedness-rbf" ? KernelFamily::Rbf : KernelFamily::Matern25, bandwidth};
      std::vector<MmdResult> res(pairs.size());
      parallel_for(pairs.size(), workers,
                   [&](std::size_t a) { res[a] = disjointedness_score(ds, pairs[a].i, pairs[a].j, spec, seed); });
      for (std::size_t a = 0; a < pairs.size(); ++a) {
        matrix.set(pairs[a], res[a].mmd2);
        diag[a] = {{"i", pairs[a].i},           {"j", pairs[a].j},   {"mmd2", res[a].mmd2},
                   {"bandwidth", res[a].bandwidth_used}, {"n_x", res[a].n_x}, {"n_y", res[a].n_y}};
      }
    } else {
      const auto table = cfg["embeddings"].is_null()
                             ? mean_centered_embeddings(ds)
                             : mean_centered_embeddings(io::dataset_load(cfg["embeddings"].get<std::string>()));
      for (std::size_t a = 0; a < pairs.size(); ++a) {
        const double s = embedding_residual_score(table, pairs[a].i, pairs[a].j);
        matrix.set(pairs[a], s);
        diag[a] = {{"i", pairs[a].i}, {"j", pairs[a].j}, {"score", s}};
      }
      extra["embedding_dim"] = table.dim;
    }
    io::write_score_matrix(matrix, dir / (stat + ".csv"));
    json d = extra;
    d["stat"] = stat;
    d["pairs"] = diag;
    io::write_file_atomic(dir / (stat + ".diagnostics.json"), d.dump(2) + "\n");

    std::vector<std::pair<double, Pair>> ranked;
    for (const auto& p : pairs) ranked.emplace_back(matrix.value(p), p);
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    out << stat << ": " << pairs.size() << " pairs; highest";
    for (std::size_t r = 0; r < std::min<std::size_t>(3, ranked.size()); ++r)
      out << " " << pair_label(ds, ranked[r].second) << "=" << io::format_double(ranked[r].first);
    out << "\n";
  }
  write_descriptor(dir, "score", cfg);
  return kExitOk;
}

// ---------------------------------------------------------------------------
// discover

inline json discover_defaults() {
  const PosteriorHyperParams hp;
  const PolicyConfig pc;
  return {{"truth", nullptr},        {"policy", json::array({"ids"})},
          {"rounds", 50},            {"batch", pc.batch},
          {"seeds", 1},              {"seed", 0},
          {"lambda", pc.lambda},     {"beta", pc.beta},
          {"rank", hp.rank},         {"prior_sd", hp.prior_sd},
          {"noise_sd", hp.noise_sd}, {"n_draws", hp.n_draws},
          {"burn_in", hp.burn_in},   {"thinning", hp.thinning},
          {"chains", hp.chains},     {"percentile", 5.0},
          {"relations", nullptr},    {"out", nullptr}};
}

inline std::string history_csv(const DiscoveryState& s) {
  std::string text = "round,i,j,score\n";
  for (const auto& o : s.history)
    text += std::to_string(o.round) + "," + std::to_string(o.pair.i) + "," + std::to_string(o.pair.j) + "," +
            io::format_double(o.score) + "\n";
  return text;
}

inline constexpr const char* kMetricsHeader = "round,regret,recovery,known_count";

inline std::string metrics_csv(const DiscoveryMetrics& m) {
  std::string text = std::string(kMetricsHeader) + "\n";
  for (std::size_t r = 0; r < m.recovery.size(); ++r)
    text += std::to_string(r + 1) + "," + io::format_double(m.cumulative_regret[r]) + "," +
            io::format_double(m.recovery[r]) + "," + std::to_string(m.known_count[r]) + "\n";
  return text;
}

inline int cmd_discover(const json& cfg, int workers, bool verbose, std::ostream& out, std::ostream& err) {
  const fs::path truth_path = require_string(cfg, "truth", "discover");
  const fs::path dir = require_string(cfg, "out", "discover");
  std::vector<PolicyConfig> policies;
  for (const auto& name : cfg.at("policy")) {
    if (!name.is_string()) throw ConfigError("'policy' entries must be strings");
    PolicyConfig pc;
    pc.kind = policy_kind_from_string(name.get<std::string>());
    pc.lambda = cfg.at("lambda").get<double>();
    pc.beta = cfg.at("beta").get<double>();
    pc.batch = positive_int(cfg, "batch");
    pc.validate();
    if (std::none_of(policies.begin(), policies.end(), [&](const PolicyConfig& p) { return p.kind == pc.kind; }))
      policies.push_back(pc);
  }
  if (policies.empty()) throw ConfigError("discover: no policy requested");
  const int seeds = positive_int(cfg, "seeds");
  const auto base_seed = cfg.at("seed").get<std::uint64_t>();
  const auto rounds = cfg.at("rounds").get<long long>();
  if (rounds < 1) throw ConfigError("'rounds' must be positive");
  PosteriorHyperParams hp;
  hp.rank = positive_int(cfg, "rank");
  hp.prior_sd = cfg.at("prior_sd").get<double>();
  hp.noise_sd = cfg.at("noise_sd").get<double>();
  hp.n_draws = positive_int(cfg, "n_draws");
  hp.burn_in = cfg.at("burn_in").get<int>();
  hp.thinning = positive_int(cfg, "thinning");
  hp.chains = positive_int(cfg, "chains");
  hp.validate();
  const double percentile = cfg.at("percentile").get<double>();
  if (!(percentile > 0.0 && percentile < 100.0)) throw ConfigError("'percentile' must lie in (0, 100)");

  const auto truth = io::read_score_matrix(truth_path);
  if (!truth.fully_observed()) throw DataError("truth matrix " + truth_path.string() + " is not fully observed");
  const RelationSet relations =
      cfg["relations"].is_null() ? RelationSet{} : io::read_relations(cfg["relations"].get<std::string>());
  for (const auto& p : relations)
    if (p.j >= truth.n()) throw DataError("relation " + std::to_string(p.i) + "," + std::to_string(p.j) + " out of range");
  const auto total = pair_count(static_cast<std::size_t>(truth.n()));
  if (static_cast<std::size_t>(rounds) * static_cast<std::size_t>(policies.front().batch) > total)
    throw ConfigError("budget of " + std::to_string(rounds * policies.front().batch) + " reveals exceeds the " +
                      std::to_string(total) + " available pairs");

  struct Task {
    PolicyConfig policy;
    int seed_index;
  };
  std::vector<Task> tasks;
  for (const auto& p : policies)
    for (int s = 0; s < seeds; ++s) tasks.push_back({p, s});
  std::vector<DiscoveryMetrics> results(tasks.size());
  std::mutex log_mu;
  parallel_for(tasks.size(), workers, [&](std::size_t t) {
    const auto& task = tasks[t];
    const std::uint64_t run_seed = base_seed + static_cast<std::uint64_t>(task.seed_index);
    PosteriorHyperParams run_hp = hp;
    run_hp.seed = run_seed;
    DiscoveryOptions opt;
    opt.rounds = static_cast<int>(rounds);
    opt.percentile = percentile;
    opt.relations = relations;
    const std::string name = to_string(task.policy.kind);
    if (verbose)
      opt.on_round = [&](const DiscoveryState& st) {
        std::lock_guard lock(log_mu);
        err << name << " seed " << run_seed << " round " << st.round << ": revealed " << st.history.size() << "\n";
      };
    Rng rng(run_seed);
    const auto run = run_discovery(truth, task.policy, run_hp, opt, rng);
    const fs::path run_dir = dir / name / ("seed_" + std::to_string(task.seed_index));
    io::write_file_atomic(run_dir / "history.csv", history_csv(run.state));
    io::write_file_atomic(run_dir / "metrics.csv", metrics_csv(run.metrics));
    json desc = {{"policy", name},
                 {"seed_index", task.seed_index},
                 {"seed", run_seed},
                 {"rounds", rounds},
                 {"batch", task.policy.batch},
                 {"lambda", task.policy.lambda},
                 {"beta", task.policy.beta},
                 {"percentile", percentile},
                 {"truth", truth_path.string()},
                 {"relations", cfg["relations"]},
                 {"posterior",
                  {{"rank", hp.rank},
                   {"prior_sd", hp.prior_sd},
                   {"noise_sd", hp.noise_sd},
                   {"n_draws", hp.n_draws},
                   {"burn_in", hp.burn_in},
                   {"thinning", hp.thinning},
                   {"chains", hp.chains}}}};
    io::write_file_atomic(run_dir / "run.json", desc.dump(2) + "\n");
    results[t] = run.metrics;
  });
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    const auto& m = results[t];
    out << to_string(tasks[t].policy.kind) << " seed " << base_seed + static_cast<std::uint64_t>(tasks[t].seed_index)
        << ": regret " << io::format_double(m.cumulative_regret.back()) << ", recovery "
        << io::format_double(m.recovery.back()) << ", known " << m.known_count.back() << "\n";
  }
  write_descriptor(dir, "discover", cfg);
  return kExitOk;
}

// ---------------------------------------------------------------------------
// eval

inline json eval_defaults() { return {{"runs", nullptr}, {"out", nullptr}, {"embeddings", nullptr}, {"scores", nullptr}}; }

struct RunSeries {
  std::vector<double> regret, recovery, known;
};

inline RunSeries read_metrics_csv(const fs::path& path) {
  const std::string text = io::read_file(path);
  RunSeries s;
  std::size_t line_no = 0, start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    std::string_view line(text.data() + start, end - start);
    start = end + 1;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    ++line_no;
    if (line_no == 1) {
      if (line != kMetricsHeader) throw DataError("inconsistent run schemas: " + path.string() + " has header '" + std::string(line) + "'");
      continue;
    }
    if (line.empty()) continue;
    const auto f = io::split(line);
    if (f.size() != 4) throw DataError("inconsistent run schemas: " + path.string() + " row " + std::to_string(line_no));
    std::array<double, 4> v{};
    for (std::size_t k = 0; k < 4; ++k) {
      const auto d = io::parse_double(f[k]);
      if (!d) throw DataError(path.string() + " row " + std::to_string(line_no) + ": malformed number");
      v[k] = *d;
    }
    if (v[0] != static_cast<double>(s.regret.size() + 1))
      throw DataError(path.string() + " row " + std::to_string(line_no) + ": rounds out of sequence");
    s.regret.push_back(v[1]);
    s.recovery.push_back(v[2]);
    s.known.push_back(v[3]);
  }
  return s;
}

inline std::vector<fs::path> sorted_dirs(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_directory()) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

inline std::string summarize_runs(const fs::path& runs) {
  if (!fs::is_directory(runs)) throw DataError("no runs found: " + runs.string() + " is not a directory");
  std::map<std::string, std::vector<RunSeries>> by_policy;
  for (const auto& policy_dir : sorted_dirs(runs))
    for (const auto& seed_dir : sorted_dirs(policy_dir))
      if (fs::exists(seed_dir / "metrics.csv"))
        by_policy[policy_dir.filename().string()].push_back(read_metrics_csv(seed_dir / "metrics.csv"));
  if (by_policy.empty()) throw DataError("no runs found under " + runs.string());

  std::string text = "policy,round,metric,mean,min,max\n";
  for (const auto& [policy, series] : by_policy) {
    const std::size_t rounds = series.front().regret.size();
    for (const auto& s : series)
      if (s.regret.size() != rounds) throw DataError("inconsistent run schemas: " + policy + " runs differ in round count");
    for (std::size_t r = 0; r < rounds; ++r) {
      const std::pair<const char*, std::vector<double> RunSeries::*> metrics[] = {
          {"regret", &RunSeries::regret}, {"recovery", &RunSeries::recovery}, {"known_count", &RunSeries::known}};
      for (const auto& [name, member] : metrics) {
        double sum = 0.0, lo = std::numeric_limits<double>::infinity(), hi = -lo;
        for (const auto& s : series) {
          const double v = (s.*member)[r];
          sum += v;
          lo = std::min(lo, v);
          hi = std::max(hi, v);
        }
        text += policy + "," + std::to_string(r + 1) + "," + name + "," +
                io::format_double(sum / static_cast<double>(series.size())) + "," + io::format_double(lo) + "," +
                io::format_double(hi) + "\n";
      }
    }
  }
  return text;
}

/// Per observed pair: score and squared cosine of the two singles' centred embeddings.
inline std::string cosine_table(const EmbeddingTable& table, const ScoreMatrix& scores) {
  std::string text = "i,j,score,cosine_sq\n";
  for (const auto& p : scores.observed_pairs()) {
    const double c = cosine_sq(table.at(Condition::single(p.i)), table.at(Condition::single(p.j)));
    text += std::to_string(p.i) + "," + std::to_string(p.j) + "," + io::format_double(scores.value(p)) + "," +
            io::format_double(c) + "\n";
  }
  return text;
}

inline int cmd_eval(const json& cfg, std::ostream& out) {
  const fs::path dir = require_string(cfg, "out", "eval");
  const bool has_runs = !cfg["runs"].is_null();
  const bool has_emb = !cfg["embeddings"].is_null(), has_scores = !cfg["scores"].is_null();
  if (has_emb != has_scores) throw ConfigError("eval: 'embeddings' and 'scores' must be given together");
  if (!has_runs && !has_emb) throw ConfigError("eval: nothing to do (give 'runs' and/or 'embeddings' + 'scores')");
  if (has_runs) {
    const auto text = summarize_runs(cfg["runs"].get<std::string>());
    io::write_file_atomic(dir / "summary.csv", text);
    out << "wrote " << (dir / "summary.csv").string() << "\n";
  }
  if (has_emb) {
    const auto table = mean_centered_embeddings(io::dataset_load(cfg["embeddings"].get<std::string>()));
    const auto scores = io::read_score_matrix(cfg["scores"].get<std::string>());
    io::write_file_atomic(dir / "cosine.csv", cosine_table(table, scores));
    out << "wrote " << (dir / "cosine.csv").string() << "\n";
  }
  write_descriptor(dir, "eval", cfg);
  return kExitOk;
}

/// Maps the library's exception types onto exit codes, printing the message.
template <typename F>
int guarded(F&& body, std::ostream& err) {
  try {
    return body();
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const json::exception& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const fs::filesystem_error& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  }
}

}  // namespace pairint::cli
