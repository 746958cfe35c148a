#include <catch2/catch_amalgamated.hpp>

#include "oracles.hpp"
#include "skiff/datagen.hpp"
#include "skiff/dml.hpp"
#include "skiff/lasso.hpp"
#include "skiff/ps_remote.hpp"

using namespace skiff;

namespace {

// Minimal data-parallel app: every worker bumps one cell once per clock.
AppContract counting_app(ClockT clocks) {
  AppContract app;
  app.tables = {TableSpec{"count", 1, 1, {}}};
  app.stop.max_clocks = clocks;
  app.scheduler.kind = ScheduleKind::kEmpty;
  app.push = [](WorkerCtx& ctx) {
    ctx.ps->inc("count", 0, 0, 1.0);
    return PartialPayload{};
  };
  app.objective = [](const ModelSnapshot& snap) {
    return snap.row("count", 0)[0];
  };
  return app;
}

std::shared_ptr<DmlProblem> small_dml(std::uint64_t seed) {
  SyntheticDmlSpec spec;
  spec.dim = 8;
  spec.rank = 4;
  spec.pairs = 60;
  spec.minibatch = 8;
  spec.step0 = 0.1;
  spec.seed = seed;
  return std::make_shared<DmlProblem>(gen_dml(spec));
}

}  // namespace

TEST_CASE("per-worker per-clock increments accumulate") {
  RunConfig cfg;
  cfg.workers = 3;
  auto res = run(counting_app(5), cfg);
  CHECK(res.clocks_run == 5);
  CHECK(res.final_model.row("count", 0)[0] == 15.0);
  CHECK(res.series.back().objective == 15.0);
}

TEST_CASE("data-parallel runs have no pull barrier and degree zero") {
  auto prob = small_dml(1);
  DmlAppOptions opt;
  opt.stop.max_clocks = 6;
  auto app = make_dml_app(prob, opt, 2, 1);
  CHECK_FALSE(app.has_pull());
  RunConfig cfg;
  cfg.workers = 2;
  cfg.seed = 1;
  auto res = run(app, cfg);
  for (const auto& r : res.series.records) CHECK(r.degree == 0);
}

TEST_CASE("single-worker lasso equals sequential cyclic descent") {
  SyntheticLassoSpec spec;
  spec.n = 60;
  spec.d = 20;
  spec.sparsity = 4;
  spec.noise_sd = 0.1;
  spec.lambda = 0.1;
  spec.seed = 13;
  auto gen = gen_lasso(spec);
  auto prob = std::make_shared<LassoProblem>(gen.problem);
  LassoAppOptions opt;
  opt.kind = ScheduleKind::kFixed;
  opt.stop.max_clocks = 60;
  RunConfig cfg;
  cfg.workers = 1;
  auto res = run(make_lasso_app(prob, opt, 1), cfg);

  oracle::LassoCdOracle cd(prob->columns, prob->y, prob->lambda);
  auto expect = cd.run_cyclic(60);
  REQUIRE(res.series.records.size() == expect.size());
  for (std::size_t t = 0; t < expect.size(); ++t)
    CHECK(std::abs(res.series.records[t].objective - expect[t]) <=
          1e-10 * std::max(1.0, std::abs(expect[t])));
}

TEST_CASE("repeated in-process runs are identical at s = 0") {
  auto prob = small_dml(3);
  DmlAppOptions opt;
  opt.stop.max_clocks = 12;
  RunConfig cfg;
  cfg.workers = 3;
  cfg.seed = 21;
  auto a = run(make_dml_app(prob, opt, 3, cfg.seed), cfg);
  auto b = run(make_dml_app(prob, opt, 3, cfg.seed), cfg);
  CHECK(MetricsSeries::equal_modulo_walltime(a.series, b.series));
  CHECK(a.final_model.tables == b.final_model.tables);
}

TEST_CASE("liveness under randomized worker delays") {
  auto prob = small_dml(5);
  for (ClockT s : {0, 1, 2}) {
    DmlAppOptions opt;
    opt.stop.max_clocks = 8;
    RunConfig cfg;
    cfg.workers = 3;
    cfg.seed = 31 + std::uint64_t(s);
    cfg.staleness = s;
    cfg.delay_jitter_ms = 3;
    auto res = run(make_dml_app(prob, opt, 3, cfg.seed), cfg);
    CHECK(res.clocks_run == 8);
  }
}

TEST_CASE("observed staleness") {
  auto prob = small_dml(7);
  SECTION("single worker always reads its own commits") {
    DmlAppOptions opt;
    opt.stop.max_clocks = 10;
    RunConfig cfg;
    cfg.workers = 1;
    cfg.staleness = 3;
    auto res = run(make_dml_app(prob, opt, 1, cfg.seed), cfg);
    auto [mean, var] = observe_staleness(res);
    CHECK(mean == 0.0);
    CHECK(var == 0.0);
  }
  SECTION("bulk-synchronous runs stay within one clock") {
    DmlAppOptions opt;
    opt.stop.max_clocks = 10;
    RunConfig cfg;
    cfg.workers = 3;
    cfg.seed = 4;
    auto res = run(make_dml_app(prob, opt, 3, cfg.seed), cfg);
    CHECK(observe_staleness(res).first <= 1.0);
  }
  SECTION("a delayed worker raises the mean at s = 3") {
    DmlAppOptions opt;
    opt.stop.max_clocks = 20;
    RunConfig base;
    base.workers = 3;
    base.seed = 4;
    auto synced = run(make_dml_app(prob, opt, 3, base.seed), base);

    RunConfig delayed = base;
    delayed.staleness = 3;
    delayed.worker_delay_ms = {4.0, 0.0, 0.0};
    auto stale = run(make_dml_app(prob, opt, 3, delayed.seed), delayed);
    CHECK(observe_staleness(stale).first > observe_staleness(synced).first);
  }
}

TEST_CASE("worker failure aborts the run with a diagnostic") {
  AppContract app = counting_app(10);
  app.push = [](WorkerCtx& ctx) {
    if (ctx.clock == 3 && ctx.worker == 1)
      throw std::runtime_error("synthetic fault");
    ctx.ps->inc("count", 0, 0, 1.0);
    return PartialPayload{};
  };
  RunConfig cfg;
  cfg.workers = 2;
  CHECK_THROWS_MATCHES(run(app, cfg), RunError,
                       Catch::Matchers::MessageMatches(
                           Catch::Matchers::ContainsSubstring("synthetic fault")));
}

TEST_CASE("decisions lag the priority state by exactly one clock") {
  SyntheticLassoSpec spec;
  spec.n = 40;
  spec.d = 16;
  spec.sparsity = 3;
  spec.lambda = 0.05;
  spec.seed = 2;
  auto prob = std::make_shared<LassoProblem>(gen_lasso(spec).problem);
  LassoAppOptions opt;
  opt.kind = ScheduleKind::kPriority;
  opt.srrp.proposal_count = 6;
  opt.srrp.theta = 0.7;
  opt.stop.max_clocks = 20;
  RunConfig cfg;
  cfg.workers = 2;
  cfg.seed = 12;
  auto res = run(make_lasso_app(prob, opt, 2), cfg);
  REQUIRE(res.decision_inputs.size() >= 20);
  for (const auto& [clock, version] : res.decision_inputs) {
    // The decision for clock t was computed before pull(t-1)'s successor,
    // i.e. from priority state version max(0, t-1).
    CHECK(version == std::uint64_t(std::max<ClockT>(0, clock - 1)));
  }
}

TEST_CASE("tolerance stop ends converged runs early") {
  SyntheticLassoSpec spec;
  spec.n = 40;
  spec.d = 8;
  spec.sparsity = 2;
  spec.lambda = 0.1;
  spec.seed = 9;
  auto prob = std::make_shared<LassoProblem>(gen_lasso(spec).problem);
  LassoAppOptions opt;
  opt.kind = ScheduleKind::kFixed;
  opt.stop.max_clocks = 5000;
  opt.stop.objective_tolerance = 1e-9;
  opt.stop.window = 10;
  RunConfig cfg;
  cfg.workers = 2;
  auto res = run(make_lasso_app(prob, opt, 2), cfg);
  CHECK(res.clocks_run < 5000);
  CHECK(res.clocks_run > 10);
}

TEST_CASE("epsilon diagnostic lands in the metrics") {
  SyntheticLassoSpec spec;
  spec.n = 60;
  spec.d = 24;
  spec.sparsity = 4;
  spec.lambda = 0.05;
  spec.seed = 14;
  auto prob = std::make_shared<LassoProblem>(gen_lasso(spec).problem);
  LassoAppOptions opt;
  opt.kind = ScheduleKind::kSrrp;
  opt.srrp.proposal_count = 8;
  opt.srrp.theta = 0.4;
  opt.stop.max_clocks = 15;
  RunConfig cfg;
  cfg.workers = 2;
  cfg.epsilon_diagnostic = true;
  auto res = run(make_lasso_app(prob, opt, 2), cfg);
  CHECK(res.rho >= 1.0);
  CHECK(res.n_pairs > 0.0);
  bool any = false;
  for (const auto& r : res.series.records) any = any || r.has_epsilon;
  CHECK(any);
}

TEST_CASE("distributed mode matches in-process metrics") {
  SyntheticLassoSpec spec;
  spec.n = 80;
  spec.d = 30;
  spec.sparsity = 5;
  spec.lambda = 0.05;
  spec.seed = 77;
  auto prob = std::make_shared<LassoProblem>(gen_lasso(spec).problem);
  LassoAppOptions opt;
  opt.kind = ScheduleKind::kPriority;
  opt.srrp.proposal_count = 8;
  opt.srrp.theta = 0.5;
  opt.stop.max_clocks = 40;
  RunConfig cfg;
  cfg.workers = 2;
  cfg.shards = 2;
  cfg.seed = 5;
  auto inproc = run(make_lasso_app(prob, opt, 2), cfg);
  RunConfig dist = cfg;
  dist.mode = RunMode::kDistributed;
  auto remote = run_with_mode(make_lasso_app(prob, opt, 2), dist);
  CHECK(MetricsSeries::equal_modulo_walltime(inproc.series, remote.series));
  CHECK(inproc.final_model.tables == remote.final_model.tables);
}

TEST_CASE("distributed dml respects staleness and completes") {
  auto prob = small_dml(11);
  DmlAppOptions opt;
  opt.stop.max_clocks = 10;
  RunConfig cfg;
  cfg.workers = 2;
  cfg.staleness = 2;
  cfg.shards = 2;
  cfg.seed = 3;
  cfg.mode = RunMode::kDistributed;
  auto res = run_with_mode(make_dml_app(prob, opt, 2, cfg.seed), cfg);
  CHECK(res.clocks_run == 10);
  CHECK(res.series.back().objective <
        res.series.records.front().objective);
}
