// Acceptance suite: one check per criterion, each printing a single
// pass/fail line. Exit code 0 only when every criterion passes.
//
// Usage: acceptance [criterion-number ...]

#include <chrono>
#include <cstdio>
#include <functional>
#include <vector>

#include "oracles.hpp"
#include "skiff/conformance.hpp"
#include "skiff/datagen.hpp"
#include "skiff/experiments.hpp"

using namespace skiff;

namespace {

struct Criterion {
  int id;
  const char* name;
  std::function<bool(std::string&)> fn;
};

// ---------------------------------------------------------------------- 1
bool ssp_conformance(std::string& detail) {
  auto suite = conformance_suite();
  if (suite.size() < 20) {
    detail = "suite too small";
    return false;
  }
  bool has_straggler = false;
  for (const auto& sc : suite)
    has_straggler = has_straggler || sc.name == "straggler-blocks-reader";
  if (!has_straggler) {
    detail = "missing straggler scenario";
    return false;
  }
  auto results = run_conformance(suite);
  int failed = 0;
  for (const auto& r : results)
    if (!r.pass) {
      ++failed;
      detail += r.name + " (" + r.detail + "); ";
    }
  detail = failed == 0 ? std::to_string(results.size()) + " scenarios" : detail;
  return failed == 0;
}

// ---------------------------------------------------------------------- 2
bool sequential_equivalence(std::string& detail) {
  // Lasso: P = 1, s = 0 against the cyclic coordinate-descent oracle,
  // within 1e-10 per clock, five random instances.
  for (std::uint64_t seed = 101; seed < 106; ++seed) {
    SyntheticLassoSpec spec;
    spec.n = 200;
    spec.d = 100;
    spec.sparsity = 10;
    spec.noise_sd = 0.1;
    spec.lambda = 0.05;
    spec.seed = seed;
    auto gen = gen_lasso(spec);
    auto prob = std::make_shared<LassoProblem>(gen.problem);
    LassoAppOptions opt;
    opt.kind = ScheduleKind::kFixed;
    opt.stop.max_clocks = 300;
    RunConfig cfg;
    cfg.workers = 1;
    auto res = run(make_lasso_app(prob, opt, 1), cfg);
    oracle::LassoCdOracle cd(prob->columns, prob->y, prob->lambda);
    auto expect = cd.run_cyclic(300);
    for (std::size_t t = 0; t < expect.size(); ++t) {
      double diff = std::abs(res.series.records[t].objective - expect[t]);
      if (diff > 1e-10 * std::max(1.0, std::abs(expect[t]))) {
        detail = "lasso seed " + std::to_string(seed) + " clock " +
                 std::to_string(t) + " diff " + std::to_string(diff);
        return false;
      }
    }
  }

  // DML: P = 1 against a sequential SGD oracle on the same sampling
  // script, bit for bit.
  SyntheticDmlSpec dspec;
  dspec.dim = 8;
  dspec.rank = 4;
  dspec.pairs = 60;
  dspec.minibatch = 8;
  dspec.seed = 55;
  auto dprob = std::make_shared<DmlProblem>(gen_dml(dspec));
  const std::uint64_t run_seed = 7;
  for (ClockT clocks : {10, 50}) {
    DmlAppOptions opt;
    opt.stop.max_clocks = clocks;
    RunConfig cfg;
    cfg.workers = 1;
    cfg.seed = run_seed;
    auto res = run(make_dml_app(dprob, opt, 1, cfg.seed), cfg);

    oracle::DmlInstance inst;
    inst.dim = dprob->dim;
    inst.rank = dprob->rank;
    inst.similar = dprob->similar;
    inst.dissimilar = dprob->dissimilar;
    inst.lambda = dprob->lambda;
    oracle::DmlSgdOracle sgd(inst, dprob->step0, dprob->minibatch);
    // The sampling script: the worker stream's interleaved draws.
    Rng stream(mix_seed(run_seed, 0x646d6cULL, 0));
    DmlShard shard = DmlShard::of(*dprob, 1, 0);
    for (ClockT t = 0; t < clocks; ++t) {
      std::vector<std::pair<std::size_t, std::size_t>> draws;
      for (std::size_t c = 0; c < dprob->minibatch; ++c) {
        std::size_t si = std::size_t(stream.index(shard.sim_end));
        std::size_t di = std::size_t(stream.index(shard.dis_end));
        draws.emplace_back(si, di);
      }
      sgd.clock(t, draws);
    }
    for (RowId r = 0; r < dprob->rank; ++r) {
      const auto& row = res.final_model.row("L", r);
      for (std::size_t c = 0; c < dprob->dim; ++c)
        if (row[c] != sgd.l()[r * dprob->dim + c]) {
          detail = "dml state differs at clock horizon " +
                   std::to_string(clocks);
          return false;
        }
    }
  }
  detail = "5 lasso instances at 1e-10; dml bit-exact at 10 and 50 clocks";
  return true;
}

// ---------------------------------------------------------------------- 3
bool gradient_correctness(std::string& detail) {
  SyntheticDmlSpec spec;
  spec.dim = 6;
  spec.rank = 3;
  spec.pairs = 30;
  spec.seed = 17;
  DmlProblem prob = gen_dml(spec);
  Rng rng(5);
  int checked = 0;
  double worst = 0.0;
  for (int attempt = 0; attempt < 400 && checked < 20; ++attempt) {
    Mat l(prob.rank, prob.dim);
    for (double& v : l.data) v = rng.gaussian() * 0.5;
    oracle::DmlInstance batch;
    batch.dim = prob.dim;
    batch.rank = prob.rank;
    batch.lambda = prob.lambda;
    for (int k = 0; k < 5; ++k)
      batch.similar.push_back(
          prob.similar[std::size_t(rng.index(prob.similar.size()))]);
    bool kink = false;
    for (int k = 0; k < 5; ++k) {
      const auto& [a, b] =
          prob.dissimilar[std::size_t(rng.index(prob.dissimilar.size()))];
      double norm2 = 0.0;
      for (std::size_t r = 0; r < prob.rank; ++r) {
        double v = 0.0;
        for (std::size_t c = 0; c < prob.dim; ++c)
          v += l.at(r, c) * (a[c] - b[c]);
        norm2 += v * v;
      }
      if (std::abs(1.0 - norm2) <= 1e-3) kink = true;
      batch.dissimilar.push_back({a, b});
    }
    if (kink) continue;
    ++checked;
    Mat g = dml_gradient(l, batch.similar, batch.dissimilar, batch.lambda);
    auto fd = oracle::dml_gradient_fd(l.data, batch);
    double num = 0.0, den = 0.0;
    for (std::size_t k = 0; k < fd.size(); ++k) {
      num += (g.data[k] - fd[k]) * (g.data[k] - fd[k]);
      den += fd[k] * fd[k];
    }
    double rel = std::sqrt(num / std::max(den, 1e-300));
    worst = std::max(worst, rel);
    if (rel > 1e-5) {
      detail = "relative error " + std::to_string(rel);
      return false;
    }
  }
  if (checked < 20) {
    detail = "could not find 20 non-kink points";
    return false;
  }
  detail = "20 points, worst relative error " + std::to_string(worst);
  return true;
}

// ---------------------------------------------------------------------- 4
bool scheduling_wins(std::string& detail) {
  const WorkerId workers = 8;
  std::vector<double> random_clocks, prio_clocks;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    SyntheticLassoSpec spec;
    spec.n = 1000;
    spec.d = 500;
    spec.sparsity = 25;
    spec.block_size = 10;
    spec.block_corr = 0.9;
    spec.noise_sd = 0.1;
    spec.lambda = 0.05;
    spec.seed = seed;
    auto gen = gen_lasso(spec);
    auto prob = std::make_shared<LassoProblem>(gen.problem);

    oracle::LassoCdOracle cd(prob->columns, prob->y, prob->lambda);
    double opt_obj = cd.solve(600, 1e-13);
    double target = opt_obj + 0.01 * std::abs(opt_obj);

    const ClockT max_clocks = 2000;
    auto clocks_to_target = [&](const std::string& arm) {
      RunConfig cfg;
      cfg.workers = workers;
      cfg.seed = seed;
      auto app = make_lasso_app(
          prob,
          lasso_arm_options(arm, workers, 4 * workers, 0.5, 1e-4, max_clocks),
          workers);
      RunResult res = run(app, cfg);
      for (const auto& r : res.series.records)
        if (r.objective <= target) return double(r.clock + 1);
      return double(max_clocks);
    };
    random_clocks.push_back(clocks_to_target("random"));
    prio_clocks.push_back(clocks_to_target("srrp-priority"));
  }
  auto median = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
  };
  double med_random = median(random_clocks);
  double med_prio = median(prio_clocks);
  detail = "median clocks to target: prioritized " + std::to_string(med_prio) +
           ", random " + std::to_string(med_random);
  return med_prio <= 0.5 * med_random;
}

// ---------------------------------------------------------------------- 5
bool safety_vs_divergence(std::string& detail) {
  // Planted duplicates: column 0 carries the signal and is duplicated
  // twice; column 3 is orthogonal. Forcing joint updates of the duplicate
  // group must overshoot; the dependency check at theta = 0.5 never
  // co-schedules them.
  const double lambda = 0.1;
  const std::size_t n = 16;
  std::vector<std::vector<double>> cols(4, std::vector<double>(n, 0.0));
  cols[0][0] = 1.0;
  cols[1] = cols[0];
  cols[2] = cols[0];
  cols[3][1] = 1.0;
  std::vector<double> y(n, 0.0);
  y[0] = 2.0;
  y[1] = 0.5;
  auto prob =
      std::make_shared<LassoProblem>(LassoProblem::create(cols, y, lambda));
  double f0 = lasso_objective(*prob, std::vector<double>(4, 0.0));

  LassoAppOptions forced;
  forced.kind = ScheduleKind::kFixed;
  forced.block_map = {{0}, {1}, {2}, {3}};
  forced.stop.max_clocks = 20;
  RunConfig fcfg;
  fcfg.workers = 4;
  auto forced_res = run(make_lasso_app(prob, forced, 4), fcfg);
  bool increased = forced_res.series.records.front().objective > f0 + 1e-6;
  double prev = f0;
  for (const auto& r : forced_res.series.records) {
    increased = increased || r.objective > prev + 1e-6;
    prev = r.objective;
  }
  if (!increased) {
    detail = "forced joint updates never increased the objective";
    return false;
  }

  LassoAppOptions safe;
  safe.kind = ScheduleKind::kSrrp;
  safe.srrp.proposal_count = 4;
  safe.srrp.theta = 0.5;
  safe.stop.max_clocks = 60;
  RunConfig scfg;
  scfg.workers = 3;
  scfg.seed = 2;
  auto safe_res = run(make_lasso_app(prob, safe, 3), scfg);
  prev = f0;
  for (const auto& r : safe_res.series.records) {
    if (r.objective > prev + 1e-10) {
      detail = "dependency-checked run increased at clock " +
               std::to_string(r.clock);
      return false;
    }
    prev = r.objective;
  }
  detail = "forced overshoot observed; checked run monotone";
  return true;
}

// ---------------------------------------------------------------------- 6
bool spectral_radius_bound(std::string& detail) {
  int designs = 0;
  Rng rng(271828);
  for (std::uint64_t seed = 1; designs < 100; ++seed) {
    SyntheticLassoSpec spec;
    spec.d = 10 + std::size_t(rng.index(41));  // d <= 50
    spec.n = spec.d + 20 + std::size_t(rng.index(60));
    spec.sparsity = 1 + spec.d / 10;
    spec.block_size = 1 + std::size_t(rng.index(5));
    spec.block_corr = double(rng.index(10)) / 10.0;
    spec.noise_sd = 0.1;
    spec.lambda = 0.05;
    spec.seed = seed;
    auto gen = gen_lasso(spec);
    CorrelationIndex corr(gen.problem.columns);
    ++designs;
    for (double theta : {0.1, 0.3, 0.7}) {
      double rho = masked_spectral_radius(corr, theta);
      if (std::abs(rho - 1.0) > double(spec.d - 1) * theta + 1e-9) {
        detail = "bound violated at d=" + std::to_string(spec.d) +
                 " theta=" + std::to_string(theta);
        return false;
      }
      if (compute_epsilon(spec.d, 1.0, 1.0, rho, 100.0) != 0.0) {
        detail = "epsilon not exactly 0 for P == 1";
        return false;
      }
      if (compute_epsilon(spec.d, 4.0, 16.0, 1.0, 100.0) != 0.0) {
        detail = "epsilon not exactly 0 for rho == 1";
        return false;
      }
    }
  }
  detail = "100 designs x 3 thresholds";
  return true;
}

// ---------------------------------------------------------------------- 7
bool staleness_robustness(std::string& detail) {
  SyntheticDmlSpec spec;
  spec.dim = 32;
  spec.rank = 16;
  spec.pairs = 5000;
  spec.minibatch = 64;
  spec.step0 = 0.1;
  spec.seed = 12;
  auto prob = std::make_shared<DmlProblem>(gen_dml(spec));
  const WorkerId workers = 4;
  const ClockT clocks = 150;

  std::vector<double> finals, means;
  for (ClockT s : {0, 1, 2, 3}) {
    DmlAppOptions opt;
    opt.stop.max_clocks = clocks;
    RunConfig cfg;
    cfg.workers = workers;
    cfg.staleness = s;
    cfg.seed = spec.seed;
    cfg.worker_delay_ms.assign(workers, 0.0);
    cfg.worker_delay_ms[0] = 2.0;
    auto res = run(make_dml_app(prob, opt, workers, cfg.seed), cfg);
    finals.push_back(res.series.back().objective);
    means.push_back(res.staleness.mean());
  }
  for (std::size_t i = 1; i < finals.size(); ++i) {
    double rel = std::abs(finals[i] - finals[0]) / std::abs(finals[0]);
    if (rel > 0.02) {
      detail = "s=" + std::to_string(i) + " relative gap " +
               std::to_string(rel);
      return false;
    }
    if (means[i] + 1e-9 < means[i - 1]) {
      detail = "staleness mean decreased from s=" + std::to_string(i - 1) +
               " to s=" + std::to_string(i);
      return false;
    }
  }
  detail = "final objectives within 2%; staleness means ";
  for (double m : means) detail += std::to_string(m) + " ";
  return true;
}

// ---------------------------------------------------------------------- 8
bool ideal_trajectory_equality(std::string& detail) {
  // Exactly orthogonalized design: the dependency-checked schedule and the
  // zero-correlation oracle schedule draw identical proposals per clock,
  // so the trajectories must agree bitwise.
  const std::size_t n = 64, d = 32;
  Rng rng(33331);
  std::vector<std::vector<double>> cols(d, std::vector<double>(n));
  for (auto& c : cols)
    for (auto& v : c) v = rng.gaussian();
  for (std::size_t j = 0; j < d; ++j) {  // modified Gram-Schmidt
    for (std::size_t k = 0; k < j; ++k) {
      double dot = 0.0;
      for (std::size_t i = 0; i < n; ++i) dot += cols[j][i] * cols[k][i];
      for (std::size_t i = 0; i < n; ++i) cols[j][i] -= dot * cols[k][i];
    }
    double norm2 = 0.0;
    for (double v : cols[j]) norm2 += v * v;
    double inv = 1.0 / std::sqrt(norm2);
    for (double& v : cols[j]) v *= inv;
  }
  std::vector<double> y(n);
  for (auto& v : y) v = rng.gaussian();
  auto prob = std::make_shared<LassoProblem>(LassoProblem::create(cols, y, 0.02));

  auto run_arm = [&](const std::string& arm) {
    RunConfig cfg;
    cfg.workers = 4;
    cfg.seed = 999;
    auto app = make_lasso_app(
        prob, lasso_arm_options(arm, 4, 12, 0.5, 1e-4, 150), 4);
    return run(app, cfg);
  };
  auto srrp = run_arm("srrp");
  auto ideal = run_arm("ideal");
  auto beta_a = srrp.final_model.flatten("beta", d);
  auto beta_b = ideal.final_model.flatten("beta", d);
  double max_diff = 0.0;
  for (std::size_t j = 0; j < d; ++j)
    max_diff = std::max(max_diff, std::abs(beta_a[j] - beta_b[j]));
  if (max_diff != 0.0) {
    detail = "max abs difference " + std::to_string(max_diff);
    return false;
  }
  if (!MetricsSeries::equal_modulo_walltime(srrp.series, ideal.series)) {
    detail = "objective curves differ";
    return false;
  }
  detail = "max abs difference 0";
  return true;
}

// ---------------------------------------------------------------------- 9
bool protocol_roundtrip(std::string& detail) {
  // 1e5 randomized frames.
  Rng rng(141421);
  for (int i = 0; i < 100000; ++i) {
    wire::Message m;
    switch (rng.index(10)) {
      case 0:
        m = wire::GetReq{"t" + std::to_string(rng.index(100)),
                         rng.bits() >> 20, std::uint32_t(rng.index(16))};
        break;
      case 1: {
        wire::GetResp x;
        std::size_t k = rng.index(16);
        for (std::size_t j = 0; j < k; ++j)
          x.values.push_back(rng.uniform01() * 1e6 - 5e5);
        m = x;
        break;
      }
      case 2: {
        wire::Inc x;
        x.table = "w";
        x.producer = std::uint32_t(rng.index(8));
        x.timestamp = std::int64_t(rng.index(1000));
        std::size_t k = rng.index(8);
        for (std::size_t j = 0; j < k; ++j)
          x.entries.push_back({rng.bits() >> 40, std::uint32_t(rng.index(64)),
                               rng.uniform01() - 0.5});
        m = x;
        break;
      }
      case 3:
        m = wire::Put{"b", std::uint32_t(rng.index(8)),
                      std::int64_t(rng.index(1000)), rng.bits() >> 40,
                      std::uint32_t(rng.index(64)), rng.uniform01()};
        break;
      case 4:
        m = wire::ClockCommit{std::uint32_t(rng.index(8)), rng.bits() >> 20};
        break;
      case 5: {
        wire::Decision x;
        x.clock = rng.index(1000);
        for (std::uint32_t w = 0; w < 1 + rng.index(4); ++w)
          x.assignments.emplace_back(
              w, std::vector<std::uint64_t>{rng.index(512), rng.index(512)});
        x.degree = std::uint32_t(x.assignments.size());
        m = x;
        break;
      }
      case 6: {
        wire::Partial x;
        x.clock = rng.index(1000);
        x.worker = std::uint32_t(rng.index(8));
        std::size_t k = rng.index(32);
        for (std::size_t j = 0; j < k; ++j)
          x.payload.push_back(std::uint8_t(rng.index(256)));
        m = x;
        break;
      }
      case 7:
        m = wire::PullDone{rng.index(1000)};
        break;
      case 8:
        m = wire::Hello{wire::kProtocolVersion,
                        wire::Role(std::uint8_t(rng.index(3))),
                        std::uint32_t(rng.index(16))};
        break;
      default:
        m = wire::Shutdown{};
    }
    if (!(wire::decode(wire::encode(m)) == m)) {
      detail = "round-trip mismatch at message " + std::to_string(i);
      return false;
    }
  }

  // Fixed 2-worker lasso script, in-process vs TCP, identical metrics.
  SyntheticLassoSpec spec;
  spec.n = 100;
  spec.d = 40;
  spec.sparsity = 6;
  spec.lambda = 0.05;
  spec.seed = 3;
  auto prob = std::make_shared<LassoProblem>(gen_lasso(spec).problem);
  LassoAppOptions opt;
  opt.kind = ScheduleKind::kSrrp;
  opt.srrp.proposal_count = 8;
  opt.srrp.theta = 0.5;
  opt.stop.max_clocks = 60;
  RunConfig cfg;
  cfg.workers = 2;
  cfg.shards = 2;
  cfg.seed = 31;
  auto inproc = run(make_lasso_app(prob, opt, 2), cfg);
  RunConfig dist = cfg;
  dist.mode = RunMode::kDistributed;
  auto remote = run_with_mode(make_lasso_app(prob, opt, 2), dist);
  if (!MetricsSeries::equal_modulo_walltime(inproc.series, remote.series)) {
    detail = "in-process and tcp metrics differ";
    return false;
  }
  detail = "100000 frames; transport-identical metrics";
  return true;
}

// --------------------------------------------------------------------- 10
bool priority_sampler_distribution(std::string& detail) {
  PriorityState prio(10, 0.05);
  std::vector<double> changes = {2.0, 1.5, 1.0, 0.8, 0.5,
                                 0.3, 0.2, 0.1, 0.05, 0.0};
  for (std::size_t j = 0; j < changes.size(); ++j) prio.update(j, changes[j]);
  // Coordinate 9 carries only the eta floor.
  double total = 0.0;
  for (double w : prio.weights) total += w;

  const int draws = 100000;
  std::vector<int> counts(10, 0);
  for (int k = 0; k < draws; ++k)
    ++counts[schedule_priority_draw(prio, 1, mix_seed(606, k))[0]];

  double worst = 0.0;
  for (std::size_t j = 0; j < 10; ++j) {
    double expect = prio.weights[j] / total;
    double got = double(counts[j]) / draws;
    worst = std::max(worst, std::abs(got - expect));
    if (std::abs(got - expect) > 0.01) {
      detail = "index " + std::to_string(j) + " off by " +
               std::to_string(std::abs(got - expect));
      return false;
    }
  }
  if (counts[9] == 0) {
    detail = "eta-floor coordinate was never drawn";
    return false;
  }
  detail = "worst frequency gap " + std::to_string(worst) + "; floor drawn " +
           std::to_string(counts[9]) + " times";
  return true;
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<Criterion> criteria = {
      {1, "ssp-conformance", ssp_conformance},
      {2, "sequential-equivalence", sequential_equivalence},
      {3, "dml-gradient-correctness", gradient_correctness},
      {4, "scheduling-wins", scheduling_wins},
      {5, "safety-vs-divergence", safety_vs_divergence},
      {6, "spectral-radius-bound", spectral_radius_bound},
      {7, "staleness-robustness", staleness_robustness},
      {8, "ideal-trajectory-equality", ideal_trajectory_equality},
      {9, "protocol-roundtrip", protocol_roundtrip},
      {10, "priority-sampler-distribution", priority_sampler_distribution},
  };

  std::vector<int> only;
  for (int i = 1; i < argc; ++i) only.push_back(std::atoi(argv[i]));

  int failures = 0;
  for (const auto& c : criteria) {
    if (!only.empty() &&
        std::find(only.begin(), only.end(), c.id) == only.end())
      continue;
    std::string detail;
    auto t0 = std::chrono::steady_clock::now();
    bool ok = false;
    try {
      ok = c.fn(detail);
    } catch (const std::exception& e) {
      detail = std::string("exception: ") + e.what();
    }
    double secs = std::chrono::duration<double>(
                      std::chrono::steady_clock::now() - t0)
                      .count();
    std::printf("[%s] criterion %2d %-32s (%6.2fs) %s\n",
                ok ? "PASS" : "FAIL", c.id, c.name, secs, detail.c_str());
    std::fflush(stdout);
    if (!ok) ++failures;
  }
  if (failures) std::printf("%d criterion(s) failed\n", failures);
  return failures == 0 ? 0 : 1;
}
