// skiff command-line harness: dataset generation and ingestion, single
// runs, experiment suites, and the SSP conformance checker.
//
// Exit codes: 0 ok, 2 configuration error, 3 run failure, 4 conformance
// failure. Log level comes from PETUUM_LITE_LOG (error|warn|info|debug).

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

#include "skiff/dataio.hpp"
#include "skiff/experiments.hpp"

namespace {

using namespace skiff;

// Every flag mirrors a config-file key; flags given on the command line
// override file values.
struct FlagOverlay {
  CLI::App* cmd;
  std::string config_path;
  Config overlay;

  void add_option(const std::string& flag, const std::string& key,
                  const std::string& help) {
    auto value = std::make_shared<std::string>();
    cmd->add_option_function<std::string>(
        flag, [this, key](const std::string& v) { overlay.set(key, v); }, help);
  }

  Config resolve() const {
    Config cfg;
    if (!config_path.empty()) cfg = Config::from_file(config_path);
    for (const auto& [k, v] : overlay.values()) cfg.set(k, v);
    return cfg;
  }
};

void add_common_flags(FlagOverlay& f) {
  f.cmd->add_option("--config", f.config_path, "flat key = value config file");
  f.add_option("--workers", "workers", "worker count P");
  f.add_option("--staleness", "staleness", "staleness bound s");
  f.add_option("--seed", "seed", "run seed");
  f.add_option("--mode", "mode", "inproc|dist");
  f.add_option("--shards", "shards", "server shard count");
  f.add_option("--clocks", "clocks", "max clocks");
  f.add_option("--tol", "tol", "relative objective tolerance stop");
  f.add_option("--lambda", "lambda", "l1 penalty");
  f.add_option("--theta", "theta", "correlation threshold");
  f.add_option("--q", "q", "scheduler proposal count Q");
  f.add_option("--eta", "eta", "priority floor eta");
  f.add_option("--step", "step", "sgd base step size");
}

RunConfig run_config_from(const Config& cfg) {
  RunConfig rc;
  rc.workers = WorkerId(cfg.u64("workers", 2));
  rc.staleness = cfg.i64("staleness", 0);
  rc.seed = cfg.u64("seed", 1);
  rc.shards = std::uint32_t(cfg.u64("shards", 1));
  std::string mode = cfg.str("mode", "inproc");
  if (mode != "inproc" && mode != "dist")
    throw UsageError("mode must be inproc or dist");
  rc.mode = mode == "dist" ? RunMode::kDistributed : RunMode::kInProc;
  return rc;
}

SyntheticLassoSpec lasso_spec_from(const Config& cfg) {
  SyntheticLassoSpec spec;
  spec.n = cfg.u64("n", 1000);
  spec.d = cfg.u64("d", 500);
  spec.sparsity = cfg.u64("sparsity", 25);
  spec.block_size = cfg.u64("block-size", 1);
  spec.block_corr = cfg.number("block-corr", 0.0);
  spec.noise_sd = cfg.number("noise-sd", 0.1);
  spec.lambda = cfg.number("lambda", 0.05);
  spec.seed = cfg.u64("seed", 1);
  return spec;
}

SyntheticDmlSpec dml_spec_from(const Config& cfg) {
  SyntheticDmlSpec spec;
  spec.dim = cfg.u64("dim", 32);
  spec.rank = cfg.u64("rank", 16);
  spec.pairs = cfg.u64("pairs-count", 5000);
  spec.separation = cfg.number("separation", 3.0);
  spec.noise_sd = cfg.number("pair-noise", 1.0);
  spec.lambda = cfg.number("lambda", 1.0);
  spec.step0 = cfg.number("step", 0.1);
  spec.minibatch = cfg.u64("minibatch", 64);
  spec.seed = cfg.u64("seed", 1);
  return spec;
}

int cmd_run(const Config& cfg) {
  std::string app_name = cfg.str("app", "");
  if (app_name != "lasso" && app_name != "dml")
    throw UsageError("--app must be lasso or dml");
  RunConfig rc = run_config_from(cfg);
  std::string out_dir = cfg.str("out", "");
  if (!out_dir.empty()) std::filesystem::create_directories(out_dir);

  RunResult res;
  if (app_name == "lasso") {
    std::shared_ptr<LassoProblem> prob;
    if (cfg.has("x")) {
      auto rows = ingest_dense_csv(cfg.str("x", ""), cfg.flag("header", false));
      auto y = ingest_vector(cfg.str("y", ""));
      LassoIngestReport report;
      prob = std::make_shared<LassoProblem>(standardize_lasso(
          std::move(rows), std::move(y), cfg.number("lambda", 0.05), &report));
      SKIFF_INFO("standardized input: y mean " << report.y_mean << ", y scale "
                                               << report.y_scale);
    } else {
      prob = std::make_shared<LassoProblem>(gen_lasso(lasso_spec_from(cfg)).problem);
    }
    LassoAppOptions opt = lasso_arm_options(
        cfg.str("schedule", "srrp-priority"), rc.workers,
        cfg.u64("q", 4 * rc.workers), cfg.number("theta", 0.5),
        cfg.number("eta", 1e-4), cfg.i64("clocks", 500));
    opt.stop.objective_tolerance = cfg.number("tol", 0.0);
    res = run_with_mode(make_lasso_app(prob, opt, rc.workers), rc);
  } else {
    auto prob = std::make_shared<DmlProblem>();
    if (cfg.has("pairs")) {
      ingest_pairs(cfg.str("pairs", ""), *prob);
      prob->rank = cfg.u64("rank", 16);
      prob->lambda = cfg.number("lambda", 1.0);
      prob->step0 = cfg.number("step", 0.1);
      prob->minibatch = cfg.u64("minibatch", 64);
    } else {
      *prob = gen_dml(dml_spec_from(cfg));
    }
    DmlAppOptions opt;
    opt.stop.max_clocks = cfg.i64("clocks", 200);
    opt.stop.objective_tolerance = cfg.number("tol", 0.0);
    res = run(make_dml_app(prob, opt, rc.workers, rc.seed), rc);
  }

  auto [mean, var] = observe_staleness(res);
  std::cout << "clocks: " << res.clocks_run
            << "\nfinal objective: " << std::setprecision(12)
            << res.series.back().objective << "\nobserved staleness: mean "
            << mean << ", variance " << var << "\n";
  if (!out_dir.empty()) {
    res.series.write_csv(out_dir + "/metrics.csv");
    Config manifest = cfg;
    manifest.set("kind", "run");
    write_manifest(out_dir, manifest);
    std::cout << "metrics: " << out_dir << "/metrics.csv\n";
  }
  return 0;
}

int cmd_gen(const Config& cfg) {
  std::string kind = cfg.str("kind", "lasso");
  std::string out_dir = cfg.str("out", "data");
  std::filesystem::create_directories(out_dir);
  Config manifest = cfg;
  manifest.set("kind", "gen-" + kind);
  if (kind == "lasso") {
    SyntheticLassoSpec spec = lasso_spec_from(cfg);
    GeneratedLasso gen = gen_lasso(spec);
    std::vector<std::vector<double>> rows(spec.n,
                                          std::vector<double>(spec.d));
    for (std::size_t j = 0; j < spec.d; ++j)
      for (std::size_t i = 0; i < spec.n; ++i)
        rows[i][j] = gen.problem.columns[j][i];
    write_dense_csv(out_dir + "/x.csv", rows);
    write_vector_csv(out_dir + "/y.csv", gen.problem.y);
    write_vector_csv(out_dir + "/beta_true.csv", gen.beta_true);
    manifest.set("input-hash.x", git_blob_sha1_file(out_dir + "/x.csv"));
    manifest.set("input-hash.y", git_blob_sha1_file(out_dir + "/y.csv"));
    CorrelationIndex corr(gen.problem.columns);
    double theta = cfg.number("theta", 0.5);
    double rho = masked_spectral_radius(corr, theta);
    manifest.set("rho-measured", std::to_string(rho));
    std::cout << "wrote " << out_dir << "/x.csv, y.csv, beta_true.csv\n"
              << "masked spectral radius at theta " << theta << ": " << rho
              << "\n";
  } else if (kind == "dml") {
    DmlProblem prob = gen_dml(dml_spec_from(cfg));
    write_pairs(out_dir + "/pairs.txt", prob);
    manifest.set("input-hash.pairs", git_blob_sha1_file(out_dir + "/pairs.txt"));
    std::cout << "wrote " << out_dir << "/pairs.txt (" << prob.similar.size()
              << " similar, " << prob.dissimilar.size() << " dissimilar)\n";
  } else {
    throw UsageError("gen --kind must be lasso or dml");
  }
  write_manifest(out_dir, manifest);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"skiff: a desk-scale bounded-staleness parameter server and "
               "model-parallel scheduling runtime"};
  app.require_subcommand(1);

  FlagOverlay run_flags{app.add_subcommand("run", "run one solver")};
  add_common_flags(run_flags);
  run_flags.add_option("--app", "app", "lasso|dml");
  run_flags.add_option("--schedule", "schedule",
                       "fixed|random|srrp|srrp-priority (lasso)");
  run_flags.add_option("--x", "x", "design matrix CSV");
  run_flags.add_option("--y", "y", "response CSV (one value per line)");
  run_flags.add_option("--pairs", "pairs", "pairs file (dml)");
  run_flags.add_option("--out", "out", "output directory");
  run_flags.add_option("--n", "n", "synthetic samples");
  run_flags.add_option("--d", "d", "synthetic features");
  run_flags.add_option("--rank", "rank", "dml rank");
  run_flags.add_option("--dim", "dim", "dml feature dimension");
  run_flags.add_option("--minibatch", "minibatch", "dml minibatch size C");

  FlagOverlay gen_flags{app.add_subcommand("gen", "generate synthetic data")};
  add_common_flags(gen_flags);
  gen_flags.add_option("--kind", "kind", "lasso|dml");
  gen_flags.add_option("--out", "out", "output directory");
  gen_flags.add_option("--n", "n", "samples");
  gen_flags.add_option("--d", "d", "features");
  gen_flags.add_option("--sparsity", "sparsity", "planted nonzeros");
  gen_flags.add_option("--block-size", "block-size", "correlated block size");
  gen_flags.add_option("--block-corr", "block-corr", "within-block correlation");
  gen_flags.add_option("--noise-sd", "noise-sd", "observation noise");
  gen_flags.add_option("--dim", "dim", "dml feature dimension");
  gen_flags.add_option("--rank", "rank", "dml rank");
  gen_flags.add_option("--pairs-count", "pairs-count", "dml pair count");

  FlagOverlay exp_flags{
      app.add_subcommand("experiment", "run an experiment suite")};
  add_common_flags(exp_flags);
  exp_flags.add_option("--kind", "kind",
                       "lasso-sched-compare|dml-staleness|ssp-semantics|"
                       "theory-diagnostics");
  exp_flags.add_option("--out", "out", "output directory");
  exp_flags.add_option("--seeds", "seeds", "number of seeds");
  exp_flags.add_option("--n", "n", "samples");
  exp_flags.add_option("--d", "d", "features");
  exp_flags.add_option("--sparsity", "sparsity", "planted nonzeros");
  exp_flags.add_option("--block-size", "block-size", "correlated block size");
  exp_flags.add_option("--block-corr", "block-corr", "within-block correlation");
  exp_flags.add_option("--noise-sd", "noise-sd", "observation noise");
  exp_flags.add_option("--trials", "trials", "diagnostic trials");
  exp_flags.add_option("--straggle-ms", "straggle-ms", "per-clock delay of worker 0");

  FlagOverlay conf_flags{app.add_subcommand(
      "conformance", "run the scripted SSP conformance scenarios")};
  conf_flags.cmd->add_option("--config", conf_flags.config_path,
                             "flat key = value config file");
  conf_flags.add_option("--out", "out", "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (run_flags.cmd->parsed()) return cmd_run(run_flags.resolve());
    if (gen_flags.cmd->parsed()) return cmd_gen(gen_flags.resolve());
    if (exp_flags.cmd->parsed()) {
      Config cfg = exp_flags.resolve();
      std::string kind = cfg.str("kind", "");
      if (kind.empty()) throw skiff::UsageError("experiment needs --kind");
      return skiff::run_experiment(kind, cfg, cfg.str("out", "out"));
    }
    if (conf_flags.cmd->parsed()) {
      Config cfg = conf_flags.resolve();
      std::string out = cfg.str("out", "out");
      std::filesystem::create_directories(out);
      return skiff::experiment_ssp_semantics(cfg, out);
    }
  } catch (const skiff::UsageError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "run failed: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
