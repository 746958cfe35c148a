#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "skiff/conformance.hpp"
#include "skiff/config.hpp"
#include "skiff/datagen.hpp"
#include "skiff/hash.hpp"
#include "skiff/ps_remote.hpp"

namespace skiff {

inline std::string serialize_lasso_instance(const GeneratedLasso& g) {
  std::ostringstream os;
  os << std::setprecision(17);
  for (std::size_t j = 0; j < g.problem.dim(); ++j) {
    for (double v : g.problem.columns[j]) os << v << ',';
    os << '\n';
  }
  os << "y:";
  for (double v : g.problem.y) os << v << ',';
  os << "\nbeta:";
  for (double v : g.beta_true) os << v << ',';
  os << '\n';
  return os.str();
}

inline void write_manifest(const std::string& out_dir, const Config& cfg) {
  std::ofstream out(out_dir + "/manifest.txt");
  if (!out) throw UsageError("cannot write manifest in " + out_dir);
  out << "# rerun with: skiff experiment --config manifest.txt --out <dir>\n";
  out << cfg.serialize();
}

// Scheduling arms for the lasso comparison. "random" is the uncoordinated
// shotgun-style baseline (theta = 1 admits every pair, so the first P
// proposals are kept); "ideal" is the zero-correlation oracle schedule
// realized the same way and only meaningful on orthogonal designs.
inline LassoAppOptions lasso_arm_options(const std::string& arm,
                                         WorkerId workers, std::size_t q,
                                         double theta, double eta,
                                         ClockT max_clocks) {
  LassoAppOptions opt;
  opt.srrp.proposal_count = std::max<std::size_t>(q, workers + 1);
  opt.srrp.theta = theta;
  opt.eta = eta;
  opt.stop.max_clocks = max_clocks;
  if (arm == "random" || arm == "ideal") {
    opt.kind = ScheduleKind::kSrrp;
    opt.srrp.theta = 1.0;
  } else if (arm == "srrp") {
    opt.kind = ScheduleKind::kSrrp;
  } else if (arm == "srrp-priority") {
    opt.kind = ScheduleKind::kPriority;
  } else if (arm == "fixed") {
    opt.kind = ScheduleKind::kFixed;
  } else {
    throw UsageError("unknown scheduling arm: " + arm);
  }
  return opt;
}

inline void write_arm_csv(const std::string& path,
                          const std::vector<std::pair<std::uint64_t, MetricsSeries>>&
                              per_seed) {
  std::ofstream out(path);
  if (!out) throw UsageError("cannot open for writing: " + path);
  out << "seed," << MetricsSeries::csv_header() << "\n";
  for (const auto& [seed, series] : per_seed)
    for (const auto& r : series.records)
      out << seed << ',' << MetricsSeries::csv_row(r) << "\n";
}

// Arms {random, srrp, srrp-priority} on the same block-correlated
// instances and seeds; one CSV per arm plus a manifest.
inline int experiment_lasso_sched_compare(const Config& cfg,
                                          const std::string& out_dir) {
  SyntheticLassoSpec spec;
  spec.n = cfg.u64("n", 1000);
  spec.d = cfg.u64("d", 500);
  spec.sparsity = cfg.u64("sparsity", 25);
  spec.block_size = cfg.u64("block-size", 10);
  spec.block_corr = cfg.number("block-corr", 0.9);
  spec.noise_sd = cfg.number("noise-sd", 0.1);
  spec.lambda = cfg.number("lambda", 0.05);
  WorkerId workers = WorkerId(cfg.u64("workers", 8));
  std::size_t q = cfg.u64("q", 4 * workers);
  double theta = cfg.number("theta", 0.5);
  double eta = cfg.number("eta", 1e-4);
  ClockT max_clocks = cfg.i64("clocks", 1500);
  std::uint64_t seed0 = cfg.u64("seed", 1);
  std::size_t num_seeds = cfg.u64("seeds", 5);

  Config manifest = cfg;
  manifest.set("kind", "lasso-sched-compare");
  const std::vector<std::string> arms = {"random", "srrp", "srrp-priority"};
  std::map<std::string, std::vector<std::pair<std::uint64_t, MetricsSeries>>>
      curves;
  int rc = 0;
  for (std::size_t k = 0; k < num_seeds; ++k) {
    std::uint64_t seed = seed0 + k;
    spec.seed = seed;
    GeneratedLasso gen = gen_lasso(spec);
    manifest.set("input-hash." + std::to_string(seed),
                 git_blob_sha1(serialize_lasso_instance(gen)));
    auto prob = std::make_shared<LassoProblem>(gen.problem);
    CorrelationIndex corr(prob->columns);
    if (k == 0) {
      double rho = masked_spectral_radius(corr, theta);
      manifest.set("rho-measured", std::to_string(rho));
    }
    for (const auto& arm : arms) {
      RunConfig rc_run;
      rc_run.workers = workers;
      rc_run.seed = seed;
      rc_run.mode = cfg.str("mode", "inproc") == "dist" ? RunMode::kDistributed
                                                        : RunMode::kInProc;
      auto app = make_lasso_app(
          prob, lasso_arm_options(arm, workers, q, theta, eta, max_clocks),
          workers);
      try {
        RunResult res = run_with_mode(app, rc_run);
        curves[arm].emplace_back(seed, std::move(res.series));
      } catch (const std::exception& e) {
        SKIFF_WARN("arm " << arm << " seed " << seed << " failed: " << e.what());
        write_arm_csv(out_dir + "/" + arm + ".csv.partial", curves[arm]);
        rc = 3;
      }
    }
  }
  if (rc == 0)
    for (const auto& arm : arms)
      write_arm_csv(out_dir + "/" + arm + ".csv", curves[arm]);
  write_manifest(out_dir, manifest);
  return rc;
}

// DML at s in {0,1,2,3}, same seed and data, with an artificial straggler.
inline int experiment_dml_staleness(const Config& cfg,
                                    const std::string& out_dir) {
  SyntheticDmlSpec spec;
  spec.dim = cfg.u64("dim", 32);
  spec.rank = cfg.u64("rank", 16);
  spec.pairs = cfg.u64("pairs", 5000);
  spec.lambda = cfg.number("lambda", 1.0);
  spec.step0 = cfg.number("step", 0.1);
  spec.minibatch = cfg.u64("minibatch", 64);
  spec.seed = cfg.u64("seed", 1);
  WorkerId workers = WorkerId(cfg.u64("workers", 4));
  ClockT clocks = cfg.i64("clocks", 200);
  double straggle_ms = cfg.number("straggle-ms", 2.0);

  auto prob = std::make_shared<DmlProblem>(gen_dml(spec));
  Config manifest = cfg;
  manifest.set("kind", "dml-staleness");

  std::ofstream summary(out_dir + "/summary.csv");
  summary << "staleness,final_objective,staleness_mean,staleness_var\n";
  int rc = 0;
  for (ClockT s : {0, 1, 2, 3}) {
    DmlAppOptions opt;
    opt.stop.max_clocks = clocks;
    RunConfig rc_run;
    rc_run.workers = workers;
    rc_run.staleness = s;
    rc_run.seed = spec.seed;
    rc_run.worker_delay_ms.assign(workers, 0.0);
    rc_run.worker_delay_ms[0] = straggle_ms;
    auto app = make_dml_app(prob, opt, workers, rc_run.seed);
    try {
      RunResult res = run(app, rc_run);
      res.series.write_csv(out_dir + "/s" + std::to_string(s) + ".csv");
      summary << s << ',' << std::setprecision(17)
              << res.series.back().objective << ',' << res.staleness.mean()
              << ',' << res.staleness.variance() << "\n";
    } catch (const std::exception& e) {
      SKIFF_WARN("staleness arm s=" << s << " failed: " << e.what());
      rc = 3;
    }
  }
  write_manifest(out_dir, manifest);
  return rc;
}

// Runs the scripted-interleaving conformance suite.
inline int experiment_ssp_semantics(const Config& cfg,
                                    const std::string& out_dir,
                                    bool print = true) {
  auto results = run_conformance(conformance_suite());
  std::ofstream out(out_dir + "/scenarios.csv");
  out << "scenario,pass,detail\n";
  int failed = 0;
  for (const auto& r : results) {
    if (!r.pass) ++failed;
    if (print)
      std::printf("[%s] %s%s%s\n", r.pass ? "PASS" : "FAIL", r.name.c_str(),
                  r.pass ? "" : ": ", r.detail.c_str());
    out << r.name << ',' << (r.pass ? 1 : 0) << ",\"" << r.detail << "\"\n";
  }
  Config manifest = cfg;
  manifest.set("kind", "ssp-semantics");
  manifest.set("scenarios", std::to_string(results.size()));
  write_manifest(out_dir, manifest);
  return failed == 0 ? 0 : 4;
}

// Spectral-radius bound and descent-diagnostic sweep over random designs.
inline int experiment_theory_diagnostics(const Config& cfg,
                                         const std::string& out_dir) {
  std::size_t trials = cfg.u64("trials", 20);
  std::size_t d = cfg.u64("d", 40);
  std::size_t n = cfg.u64("n", 120);
  WorkerId workers = WorkerId(cfg.u64("workers", 4));
  std::size_t q = cfg.u64("q", 4 * workers);
  std::uint64_t seed0 = cfg.u64("seed", 1);

  std::ofstream out(out_dir + "/diagnostics.csv");
  out << "trial,theta,rho,bound,bound_holds,n_pairs,mean_degree,epsilon\n";
  out << std::setprecision(17);
  for (std::size_t t = 0; t < trials; ++t) {
    SyntheticLassoSpec spec;
    spec.n = n;
    spec.d = d;
    spec.sparsity = std::max<std::size_t>(1, d / 10);
    spec.block_size = 1 + t % 5;
    spec.block_corr = (t % 5) ? 0.8 : 0.0;
    spec.noise_sd = 0.1;
    spec.lambda = 0.05;
    spec.seed = seed0 + t;
    GeneratedLasso gen = gen_lasso(spec);
    CorrelationIndex corr(gen.problem.columns);
    for (double theta : {0.1, 0.3, 0.7}) {
      double rho = masked_spectral_radius(corr, theta);
      double bound = double(d - 1) * theta;
      double n_pairs = estimate_passing_pairs(corr, theta, spec.seed);
      double deg_sum = 0.0, deg_sq = 0.0;
      const int sched_clocks = 200;
      SrrpOptions srrp{q, theta};
      for (int c = 0; c < sched_clocks; ++c) {
        auto decision = schedule_srrp(c, workers, srrp, corr, nullptr,
                                      mix_seed(spec.seed, std::uint64_t(c)));
        deg_sum += decision.degree;
        deg_sq += double(decision.degree) * double(decision.degree);
      }
      double ep = deg_sum / sched_clocks;
      double ep2 = deg_sq / sched_clocks;
      double eps = ep >= 1.0 && n_pairs >= 1.0
                       ? compute_epsilon(d, ep, ep2, rho, n_pairs)
                       : 0.0;
      out << t << ',' << theta << ',' << rho << ',' << bound << ','
          << (std::abs(rho - 1.0) <= bound ? 1 : 0) << ',' << n_pairs << ','
          << ep << ',' << eps << "\n";
    }
  }
  Config manifest = cfg;
  manifest.set("kind", "theory-diagnostics");
  write_manifest(out_dir, manifest);
  return 0;
}

// Dispatch by kind; emits CSVs plus a manifest into out_dir. Nonzero on
// any arm failure, with partial outputs kept under a .partial suffix.
inline int run_experiment(const std::string& kind, const Config& cfg,
                          const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  if (kind == "lasso-sched-compare")
    return experiment_lasso_sched_compare(cfg, out_dir);
  if (kind == "dml-staleness") return experiment_dml_staleness(cfg, out_dir);
  if (kind == "ssp-semantics") return experiment_ssp_semantics(cfg, out_dir);
  if (kind == "theory-diagnostics")
    return experiment_theory_diagnostics(cfg, out_dir);
  throw UsageError("unknown experiment kind: " + kind);
}

}  // namespace skiff
