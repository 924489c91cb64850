#include <functional>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pairint/cli/commands.hpp"

namespace {

using pairint::cli::json;

// Collects flags into a JSON layer; only flags that were given on the command line appear.
class FlagLayer {
 public:
  explicit FlagLayer(CLI::App* app) : app_(app) {}

  template <typename T>
  void add(const std::string& name, const std::string& key, const std::string& help) {
    auto value = std::make_shared<T>();
    auto* opt = app_->add_option(name, *value, help);
    emit_.push_back([opt, value, key](json& j) {
      if (opt->count() == 0) return;
      set_path(j, key, json(*value));
    });
  }

  template <typename T>
  void add_list(const std::string& name, const std::string& key, const std::string& help) {
    auto value = std::make_shared<std::vector<T>>();
    auto* opt = app_->add_option(name, *value, help)->expected(1, -1);
    emit_.push_back([opt, value, key](json& j) {
      if (opt->count() == 0) return;
      set_path(j, key, json(*value));
    });
  }

  json collect() const {
    json j = json::object();
    for (const auto& f : emit_) f(j);
    return j;
  }

 private:
  static void set_path(json& j, const std::string& key, json value) {
    const auto dot = key.find('.');
    if (dot == std::string::npos) {
      j[key] = std::move(value);
      return;
    }
    set_path(j[key.substr(0, dot)], key.substr(dot + 1), std::move(value));
  }

  CLI::App* app_;
  std::vector<std::function<void(json&)>> emit_;
};

struct Sub {
  CLI::App* app;
  std::unique_ptr<FlagLayer> flags;
  std::string config_path;
};

Sub make_sub(CLI::App& root, const std::string& name, const std::string& help) {
  Sub s{root.add_subcommand(name, help), nullptr, {}};
  s.flags = std::make_unique<FlagLayer>(s.app);
  s.app->add_option("--config", s.config_path, "JSON config file (or a descriptor.json from an earlier run)");
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pairint: pairwise perturbation interaction scoring and discovery"};
  app.require_subcommand(1);
  int workers = 0;
  app.add_option("--workers", workers,
                 std::string("worker threads (default: $") + pairint::cli::kWorkersEnv + " or hardware concurrency)")
      ->check(CLI::PositiveNumber);
  bool verbose = false;

  auto synth = make_sub(app, "synth", "generate a synthetic dataset or reward matrix");
  synth.flags->add<std::string>("--kind", "kind", "separable | mixture | lowrank");
  synth.flags->add<std::uint64_t>("--seed", "seed", "generator seed");
  synth.flags->add<long long>("--n", "n", "samples per condition (separable, mixture; default 20000)");
  synth.flags->add<long long>("--mlp-depth", "mlp_depth", "depth of the random invertible MLP");
  synth.flags->add<double>("--leaky-slope", "leaky_slope", "LeakyReLU negative slope");
  synth.flags->add<long long>("--perturbations", "perturbations", "matrix size (lowrank)");
  synth.flags->add<long long>("--rank", "rank", "factor rank (lowrank)");
  synth.flags->add<double>("--noise-sd", "noise_sd", "observation noise sd (lowrank)");
  synth.flags->add<std::string>("--out", "out", "output directory");

  auto score = make_sub(app, "score", "score perturbation pairs on a dataset");
  score.flags->add<std::string>("--data", "data", "dataset manifest.json");
  score.flags->add_list<std::string>("--stat", "stat",
                                     "separability-knn | separability-nre-smile | disjointedness-rbf | "
                                     "disjointedness-matern | embedding-residual");
  score.flags->add_list<std::string>("--pairs", "pairs", "pairs to score as i,j (default: every available double)");
  score.flags->add<std::string>("--out", "out", "output directory");
  score.flags->add<std::uint64_t>("--seed", "seed", "seed for subsampling and training");
  score.flags->add<long long>("--k", "k", "nearest neighbour count for the KNN estimator");
  score.flags->add<double>("--tau", "tau", "SMILE clipping parameter");
  score.flags->add<double>("--bandwidth", "bandwidth", "kernel bandwidth (default: median heuristic)");
  score.flags->add<std::string>("--embeddings", "embeddings", "feature dataset for embedding-residual");
  score.flags->add<long long>("--nre-epochs", "nre.epochs", "ratio estimator training epochs");
  score.flags->add<double>("--nre-step-size", "nre.step_size", "Adam step size");
  score.flags->add<long long>("--nre-batch-size", "nre.batch_size", "minibatch size");
  score.flags->add_list<long long>("--nre-hidden", "nre.hidden_sizes", "hidden layer widths");
  score.flags->add<long long>("--nre-embedding-dim", "nre.embedding_dim", "encoder output width");

  auto discover = make_sub(app, "discover", "run sequential pair discovery against a reward matrix");
  discover.flags->add<std::string>("--truth", "truth", "fully observed reward matrix CSV");
  discover.flags->add_list<std::string>("--policy", "policy", "ids | ts | ucb | us | random | oracle");
  discover.flags->add<long long>("--rounds", "rounds", "number of rounds");
  discover.flags->add<long long>("--batch", "batch", "pairs revealed per round");
  discover.flags->add<long long>("--seeds", "seeds", "number of seeds per policy");
  discover.flags->add<std::uint64_t>("--seed", "seed", "first seed");
  discover.flags->add<double>("--lambda", "lambda", "IDS information ratio exponent");
  discover.flags->add<double>("--beta", "beta", "UCB exploration weight");
  discover.flags->add<long long>("--rank", "rank", "posterior factor rank");
  discover.flags->add<double>("--prior-sd", "prior_sd", "prior sd of factor entries");
  discover.flags->add<double>("--noise-sd", "noise_sd", "observation noise sd");
  discover.flags->add<long long>("--n-draws", "n_draws", "posterior draws kept per round");
  discover.flags->add<long long>("--burn-in", "burn_in", "Gibbs sweeps discarded");
  discover.flags->add<long long>("--thinning", "thinning", "Gibbs sweeps between kept draws");
  discover.flags->add<long long>("--chains", "chains", "independent Gibbs chains");
  discover.flags->add<double>("--percentile", "percentile", "top percentile used for recovery");
  discover.flags->add<std::string>("--relations", "relations", "known relations file (i,j per line)");
  discover.flags->add<std::string>("--out", "out", "output directory");
  discover.app->add_flag("--verbose,-v", verbose, "log one line per round to stderr");

  auto eval = make_sub(app, "eval", "aggregate discovery runs and join scores with embeddings");
  eval.flags->add<std::string>("--runs", "runs", "directory written by discover");
  eval.flags->add<std::string>("--out", "out", "output directory");
  eval.flags->add<std::string>("--embeddings", "embeddings", "dataset manifest used for embeddings");
  eval.flags->add<std::string>("--scores", "scores", "score matrix CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : pairint::cli::kExitConfig;
  }

  namespace cli = pairint::cli;
  return cli::guarded(
      [&]() -> int {
        const int n_workers = workers > 0 ? workers : cli::default_workers();
        auto resolve = [](const Sub& s, json defaults, const std::string& name) {
          std::optional<std::filesystem::path> file;
          if (!s.config_path.empty()) file = s.config_path;
          return cli::resolve_config(std::move(defaults), file, s.flags->collect(), name);
        };
        if (*synth.app) return cli::cmd_synth(resolve(synth, cli::synth_defaults(), "synth"), std::cout);
        if (*score.app) return cli::cmd_score(resolve(score, cli::score_defaults(), "score"), n_workers, std::cout);
        if (*discover.app)
          return cli::cmd_discover(resolve(discover, cli::discover_defaults(), "discover"), n_workers, verbose,
                                   std::cout, std::cerr);
        return cli::cmd_eval(resolve(eval, cli::eval_defaults(), "eval"), std::cout);
      },
      std::cerr);
}
