#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <thread>
#include <vector>

#include "skiff/metrics.hpp"
#include "skiff/ps.hpp"
#include "skiff/scheduler.hpp"

namespace skiff {

enum class ScheduleKind { kFixed, kSrrp, kPriority, kEmpty };
enum class RunMode { kInProc, kDistributed };
enum class PriorityForm { kChange, kMagnitude };

struct StopRule {
  ClockT max_clocks = 100;
  double objective_tolerance = 0.0;  // 0 disables the tolerance stop
  ClockT window = 10;
};

using PartialPayload = std::vector<std::uint8_t>;

struct WorkerCtx {
  WorkerId worker = 0;
  WorkerId num_workers = 1;
  ClockT clock = 0;
  const ScheduleDecision* decision = nullptr;
  PsWorkerHandle* ps = nullptr;
};

struct PullCtx {
  ClockT clock = 0;
  const ScheduleDecision* decision = nullptr;
  const std::vector<PartialPayload>* partials = nullptr;  // indexed by worker
  PsAggHandle* ps = nullptr;
  PriorityState* priority = nullptr;
};

using PushFn = std::function<PartialPayload(WorkerCtx&)>;
using PullFn = std::function<void(PullCtx&)>;
using ObjectiveFn = std::function<double(const ModelSnapshot&)>;

struct SchedulerSpec {
  ScheduleKind kind = ScheduleKind::kEmpty;
  std::size_t dim = 0;
  std::vector<std::vector<std::uint64_t>> block_map;  // kFixed
  std::shared_ptr<CorrelationIndex> corr;             // kSrrp / kPriority
  SrrpOptions srrp;
  double eta = 1e-3;
  // Touch every index once at clock 0 before dependency-checked scheduling
  // (harmless from a zero model, and it seeds the priority weights).
  bool bootstrap_full_sweep = false;
};

struct AppContract {
  std::vector<TableSpec> tables;
  SchedulerSpec scheduler;
  PushFn push;
  PullFn pull;  // absent = data-parallel, no aggregation barrier
  ObjectiveFn objective;
  StopRule stop;

  bool has_pull() const { return bool(pull); }
};

struct RunConfig {
  WorkerId workers = 1;
  ClockT staleness = 0;
  std::uint64_t seed = 0;
  RunMode mode = RunMode::kInProc;
  std::uint32_t shards = 1;
  bool record_op_log = false;
  double pull_timeout_s = 120.0;
  // Artificial per-clock worker delays (ms), for staleness experiments and
  // liveness tests. Empty = none.
  std::vector<double> worker_delay_ms;
  std::uint64_t delay_jitter_ms = 0;
  // Populate the epsilon diagnostic column (needs the correlation index).
  bool epsilon_diagnostic = false;
  // TCP endpoints (distributed mode): shard i listens on base_port + 1 + i,
  // the scheduler channel on base_port. Port 0 picks free ports.
  std::string host = "127.0.0.1";
  std::uint16_t base_port = 0;
};

struct RunResult {
  MetricsSeries series;
  StalenessStats staleness;
  ModelSnapshot final_model;
  ClockT clocks_run = 0;
  double rho = 0.0;  // masked spectral radius, when the diagnostic ran
  double n_pairs = 0.0;
  // (clock, priority version used) per decision; pipelining instrumentation.
  std::vector<std::pair<ClockT, std::uint64_t>> decision_inputs;
};

// ---------------------------------------------------------------------------
// Control channels between the scheduler and workers. The in-process boards
// double as the per-endpoint queues in distributed mode (frames are relayed
// into them by the connection reader threads).

class DecisionBoard {
 public:
  void publish(const ScheduleDecision& d) {
    std::lock_guard<std::mutex> lk(mu_);
    decisions_[d.clock] = d;
    cv_.notify_all();
  }
  void publish_stop() {
    std::lock_guard<std::mutex> lk(mu_);
    stopped_ = true;
    cv_.notify_all();
  }
  void abort(const std::string& why) {
    std::lock_guard<std::mutex> lk(mu_);
    if (error_.empty()) error_ = why;
    cv_.notify_all();
  }
  // nullopt = orderly stop. Throws RunError on abort.
  std::optional<ScheduleDecision> wait(ClockT clock) {
    std::unique_lock<std::mutex> lk(mu_);
    cv_.wait(lk, [&] {
      return stopped_ || !error_.empty() || decisions_.count(clock) != 0;
    });
    if (!error_.empty()) throw RunError(error_);
    auto it = decisions_.find(clock);
    if (it == decisions_.end()) return std::nullopt;  // stopped
    ScheduleDecision d = it->second;
    decisions_.erase(decisions_.begin(), it);
    return d;
  }

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  std::map<ClockT, ScheduleDecision> decisions_;
  bool stopped_ = false;
  std::string error_;
};

class PartialBoard {
 public:
  void put(ClockT clock, WorkerId worker, PartialPayload payload) {
    std::lock_guard<std::mutex> lk(mu_);
    pending_[clock][worker] = std::move(payload);
    cv_.notify_all();
  }
  void abort(const std::string& why) {
    std::lock_guard<std::mutex> lk(mu_);
    if (error_.empty()) error_ = why;
    cv_.notify_all();
  }
  // All P partials for `clock`, ordered by worker id. Throws RunError on
  // timeout (missing partial) or abort.
  std::vector<PartialPayload> wait_all(ClockT clock, WorkerId num_workers,
                                       double timeout_s) {
    std::unique_lock<std::mutex> lk(mu_);
    bool ok = cv_.wait_for(
        lk, std::chrono::duration<double>(timeout_s), [&] {
          return !error_.empty() ||
                 pending_[clock].size() == std::size_t(num_workers);
        });
    if (!error_.empty()) throw RunError(error_);
    if (!ok)
      throw RunError("missing partial result for clock " +
                     std::to_string(clock));
    std::vector<PartialPayload> out(num_workers);
    for (auto& [w, p] : pending_[clock]) out[w] = std::move(p);
    pending_.erase(clock);
    return out;
  }

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  std::map<ClockT, std::map<WorkerId, PartialPayload>> pending_;
  std::string error_;
};

// Transport assembly: who talks to whom. The in-process variant wires the
// boards and the shard stores directly; the TCP variant (ps_remote.hpp)
// carries the same traffic through the wire protocol.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual WorkerChannel& worker_channel(WorkerId w) = 0;
  virtual AggChannel& agg_channel() = 0;
  // Worker side.
  virtual std::optional<ScheduleDecision> wait_decision(WorkerId w,
                                                        ClockT clock) = 0;
  virtual void send_partial(WorkerId w, ClockT clock, PartialPayload p) = 0;
  // Scheduler side.
  virtual void publish_decision(const ScheduleDecision& d) = 0;
  virtual void publish_stop() = 0;
  virtual std::vector<PartialPayload> wait_partials(ClockT clock,
                                                    WorkerId num_workers,
                                                    double timeout_s) = 0;
  virtual void abort(const std::string& why) = 0;
  virtual void shutdown() {}
};

class InProcTransport : public Transport {
 public:
  InProcTransport(PsServer& ps, WorkerId num_workers)
      : worker_ch_(ps), agg_ch_(ps), decisions_(num_workers) {}

  WorkerChannel& worker_channel(WorkerId) override { return worker_ch_; }
  AggChannel& agg_channel() override { return agg_ch_; }

  std::optional<ScheduleDecision> wait_decision(WorkerId w, ClockT c) override {
    return decisions_[w].wait(c);
  }
  void send_partial(WorkerId w, ClockT c, PartialPayload p) override {
    partials_.put(c, w, std::move(p));
  }
  void publish_decision(const ScheduleDecision& d) override {
    for (auto& b : decisions_) b.publish(d);
  }
  void publish_stop() override {
    for (auto& b : decisions_) b.publish_stop();
  }
  std::vector<PartialPayload> wait_partials(ClockT c, WorkerId n,
                                            double timeout_s) override {
    return partials_.wait_all(c, n, timeout_s);
  }
  void abort(const std::string& why) override {
    for (auto& b : decisions_) b.abort(why);
    partials_.abort(why);
  }

 private:
  InProcWorkerChannel worker_ch_;
  InProcAggChannel agg_ch_;
  std::vector<DecisionBoard> decisions_;
  PartialBoard partials_;
};

// ---------------------------------------------------------------------------
// Collects per-shard merge events, assembles full-model snapshots in clock
// order, evaluates the objective off the hot path, and drives the stop rule.

class MetricsHub {
 public:
  MetricsHub(std::uint32_t num_shards, ObjectiveFn objective, StopRule stop,
             std::function<void(ClockT)> on_stop)
      : num_shards_(num_shards),
        objective_(std::move(objective)),
        stop_(stop),
        on_stop_(std::move(on_stop)),
        t0_(std::chrono::steady_clock::now()) {
    eval_thread_ = std::thread([this] { eval_loop(); });
  }

  ~MetricsHub() { finish(); }

  void on_merge(std::uint32_t shard, ClockT clock, ShardRows rows,
                StalenessStats stats) {
    (void)shard;
    std::lock_guard<std::mutex> lk(mu_);
    Pending& p = pending_[clock];
    for (auto& [table, trows] : rows)
      for (auto& [r, vals] : trows) p.tables[table][r] = std::move(vals);
    p.stats.merge(stats);
    if (++p.shards_in == num_shards_) {
      ready_.push_back(clock);
      cv_.notify_all();
    }
  }

  void set_degree(ClockT clock, std::uint32_t degree) {
    std::lock_guard<std::mutex> lk(mu_);
    degrees_[clock] = degree;
  }

  void set_epsilon_inputs(std::size_t dim, double rho, double n_pairs) {
    std::lock_guard<std::mutex> lk(mu_);
    eps_dim_ = dim;
    rho_ = rho;
    n_pairs_ = n_pairs;
    have_eps_ = true;
  }

  // Drain and join. Safe to call more than once.
  void finish() {
    {
      std::lock_guard<std::mutex> lk(mu_);
      done_ = true;
      cv_.notify_all();
    }
    if (eval_thread_.joinable()) eval_thread_.join();
  }

  MetricsSeries series() {
    std::lock_guard<std::mutex> lk(mu_);
    return series_;
  }
  ModelSnapshot last_snapshot() {
    std::lock_guard<std::mutex> lk(mu_);
    return last_snapshot_;
  }
  ClockT stop_clock() const { return stop_at_.load(); }
  bool stop_requested() const {
    return stop_at_.load() != std::numeric_limits<ClockT>::max();
  }

 private:
  struct Pending {
    std::map<std::string, std::map<RowId, std::vector<double>>> tables;
    StalenessStats stats;
    std::uint32_t shards_in = 0;
  };

  void eval_loop() {
    for (;;) {
      Pending p;
      ClockT clock;
      {
        std::unique_lock<std::mutex> lk(mu_);
        cv_.wait(lk, [&] { return done_ || !ready_.empty(); });
        if (ready_.empty()) return;  // done and drained
        clock = ready_.front();
        ready_.erase(ready_.begin());
        auto it = pending_.find(clock);
        p = std::move(it->second);
        pending_.erase(it);
      }
      if (clock > stop_at_.load()) continue;

      ModelSnapshot snap;
      snap.clock = clock;
      snap.tables = std::move(p.tables);
      double obj = objective_ ? objective_(snap) : 0.0;

      MetricsRecord rec;
      rec.clock = clock;
      rec.wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                        std::chrono::steady_clock::now() - t0_)
                        .count();
      rec.objective = obj;
      rec.staleness_mean = p.stats.mean();
      rec.staleness_var = p.stats.variance();
      {
        std::lock_guard<std::mutex> lk(mu_);
        auto dit = degrees_.find(clock);
        rec.degree = dit == degrees_.end() ? 0 : dit->second;
        if (have_eps_) {
          deg_sum_ += rec.degree;
          deg_sq_sum_ += double(rec.degree) * double(rec.degree);
          ++deg_n_;
          double ep = deg_sum_ / deg_n_;
          if (ep >= 1.0 && rho_ >= 1.0 && n_pairs_ >= 1.0) {
            rec.epsilon =
                compute_epsilon(eps_dim_, ep, deg_sq_sum_ / deg_n_, rho_,
                                n_pairs_);
            rec.has_epsilon = true;
            if (rec.epsilon >= 1.0 && !eps_warned_) {
              eps_warned_ = true;
              SKIFF_WARN("descent diagnostic epsilon = "
                         << rec.epsilon << " >= 1; expected per-clock descent "
                         << "is no longer guaranteed");
            }
          }
        }
        series_.records.push_back(rec);
        last_snapshot_ = snap;
      }

      // Stop checks run on the recorded series only, so they are
      // reproducible for any interleaving.
      bool stop_now = false;
      if (clock + 1 >= stop_.max_clocks) stop_now = true;
      if (!stop_now && stop_.objective_tolerance > 0.0) {
        std::lock_guard<std::mutex> lk(mu_);
        std::size_t n = series_.records.size();
        if (n > std::size_t(stop_.window)) {
          double prev = series_.records[n - 1 - stop_.window].objective;
          double rel = std::abs(obj - prev) / std::max(std::abs(prev), 1e-12);
          if (rel < stop_.objective_tolerance) stop_now = true;
        }
      }
      if (stop_now) {
        ClockT expect = std::numeric_limits<ClockT>::max();
        if (stop_at_.compare_exchange_strong(expect, clock) && on_stop_)
          on_stop_(clock);
      }
    }
  }

  const std::uint32_t num_shards_;
  ObjectiveFn objective_;
  StopRule stop_;
  std::function<void(ClockT)> on_stop_;
  std::chrono::steady_clock::time_point t0_;

  std::mutex mu_;
  std::condition_variable cv_;
  std::map<ClockT, Pending> pending_;
  std::vector<ClockT> ready_;
  std::map<ClockT, std::uint32_t> degrees_;
  MetricsSeries series_;
  ModelSnapshot last_snapshot_;
  std::atomic<ClockT> stop_at_{std::numeric_limits<ClockT>::max()};
  bool done_ = false;
  std::thread eval_thread_;

  bool have_eps_ = false;
  bool eps_warned_ = false;
  std::size_t eps_dim_ = 0;
  double rho_ = 0.0, n_pairs_ = 0.0;
  double deg_sum_ = 0.0, deg_sq_sum_ = 0.0, deg_n_ = 0.0;
};

// ---------------------------------------------------------------------------

using TransportFactory = std::function<std::unique_ptr<Transport>(
    PsServer&, const AppContract&, const RunConfig&)>;

// Drives the per-clock loop: schedule -> push on P workers -> pull ->
// clock commit, generic over the application contract. Owns the parameter
// server, the worker and scheduler threads, and the metrics hub.
class Engine {
 public:
  Engine(AppContract app, RunConfig cfg, TransportFactory factory = {})
      : app_(std::move(app)), cfg_(cfg) {
    validate();
    PsConfig ps_cfg;
    ps_cfg.num_workers = cfg_.workers;
    ps_cfg.num_shards = cfg_.shards;
    // Model-parallel apps synchronize at the pull barrier each clock, so
    // their reads run bulk-synchronous regardless of the configured bound.
    ps_cfg.staleness =
        StalenessBound{app_.has_pull() ? 0 : cfg_.staleness};
    ps_cfg.expects_pull = app_.has_pull();
    ps_cfg.record_op_log = cfg_.record_op_log;
    ps_ = std::make_unique<PsServer>(ps_cfg);
    for (const auto& spec : app_.tables) ps_->create_table(spec);
    if (factory)
      owned_transport_ = factory(*ps_, app_, cfg_);
    else
      owned_transport_ = std::make_unique<InProcTransport>(*ps_, cfg_.workers);
    transport_ = owned_transport_.get();
  }

  ~Engine() {
    request_abort("engine destroyed");
    join_all();
  }

  PsServer& ps() { return *ps_; }

  void start() {
    hub_ = std::make_unique<MetricsHub>(
        cfg_.shards, app_.objective, app_.stop,
        [this](ClockT) { wake_after_stop(); });
    if (cfg_.epsilon_diagnostic && app_.scheduler.corr) {
      result_.rho =
          masked_spectral_radius(*app_.scheduler.corr, app_.scheduler.srrp.theta);
      result_.n_pairs = estimate_passing_pairs(
          *app_.scheduler.corr, app_.scheduler.srrp.theta, cfg_.seed);
      hub_->set_epsilon_inputs(app_.scheduler.dim, result_.rho,
                               result_.n_pairs);
    }
    ps_->set_merge_cb([this](std::uint32_t shard, ClockT clock, ShardRows rows,
                             StalenessStats stats) {
      hub_->on_merge(shard, clock, std::move(rows), std::move(stats));
    });

    final_commits_.assign(cfg_.workers, 0);
    for (WorkerId w = 0; w < cfg_.workers; ++w)
      workers_.emplace_back([this, w] { worker_main(w); });
    if (app_.has_pull())
      scheduler_ = std::thread([this] { scheduler_main(); });
  }

  RunResult wait() {
    join_all();
    hub_->finish();
    {
      std::lock_guard<std::mutex> lk(mu_);
      if (!first_error_.empty()) throw RunError(first_error_);
    }
    result_.series = hub_->series();
    result_.staleness = ps_->staleness_stats();
    result_.final_model = hub_->last_snapshot();
    result_.clocks_run = ClockT(result_.series.records.size());
    return std::move(result_);
  }

  StalenessStats staleness_now() const { return ps_->staleness_stats(); }
  MetricsSeries series_now() { return hub_ ? hub_->series() : MetricsSeries{}; }

  void abort(const std::string& why) { request_abort(why); }

 private:
  void validate() const {
    if (cfg_.workers < 1) throw UsageError("worker count must be >= 1");
    if (cfg_.staleness < 0) throw UsageError("staleness must be >= 0");
    const auto& s = app_.scheduler;
    if ((s.kind == ScheduleKind::kSrrp || s.kind == ScheduleKind::kPriority) &&
        s.srrp.proposal_count <= cfg_.workers)
      throw UsageError("srrp requires proposal count Q > worker count P");
    if (!cfg_.worker_delay_ms.empty() &&
        cfg_.worker_delay_ms.size() != cfg_.workers)
      throw UsageError("worker_delay_ms must have one entry per worker");
  }

  void worker_main(WorkerId w) {
    PsWorkerHandle handle(w, ps_->registry(), transport_->worker_channel(w));
    Rng jitter(mix_seed(cfg_.seed, 0x6a6974746572ULL, w));
    ClockT committed = 0;
    try {
      for (ClockT t = 0; t < app_.stop.max_clocks; ++t) {
        if (stopping() && t > hub_->stop_clock()) break;
        std::optional<ScheduleDecision> decision;
        if (app_.has_pull()) {
          decision = transport_->wait_decision(w, t);
          if (!decision) break;  // orderly stop
        } else {
          decision.emplace();
          decision->clock = t;
        }
        apply_delay(w, jitter);
        WorkerCtx ctx{w, cfg_.workers, t, &*decision, &handle};
        PartialPayload partial = app_.push(ctx);
        if (app_.has_pull()) transport_->send_partial(w, t, std::move(partial));
        handle.clock_commit();
        committed = t + 1;
      }
    } catch (const InterruptedError&) {
      // Shutdown during an SSP wait: clean exit when a stop was requested.
      if (!stopping()) fail("worker " + std::to_string(w) + " interrupted");
    } catch (const std::exception& e) {
      fail("worker " + std::to_string(w) + " failed: " + e.what());
    }
    std::lock_guard<std::mutex> lk(mu_);
    final_commits_[w] = committed;
  }

  void scheduler_main() {
    PsAggHandle agg(ps_->registry(), transport_->agg_channel());
    const SchedulerSpec& spec = app_.scheduler;
    std::optional<PriorityState> prio;
    if (spec.kind == ScheduleKind::kPriority)
      prio.emplace(spec.dim, spec.eta);
    try {
      ScheduleDecision next = compute_decision(0, prio ? &*prio : nullptr);
      for (ClockT t = 0; t < app_.stop.max_clocks; ++t) {
        if (stopping() && t > hub_->stop_clock()) break;
        hub_->set_degree(t, next.degree);
        transport_->publish_decision(next);
        // Pipelining: the decision for t+1 is computed before pull(t)
        // lands, i.e. from model state no fresher than clock t.
        ScheduleDecision upcoming =
            compute_decision(t + 1, prio ? &*prio : nullptr);
        std::vector<PartialPayload> partials =
            transport_->wait_partials(t, cfg_.workers, cfg_.pull_timeout_s);
        PullCtx ctx{t, &next, &partials, &agg, prio ? &*prio : nullptr};
        if (app_.pull) app_.pull(ctx);
        if (prio) ++prio->version;
        agg.pull_done(t);
        {
          std::lock_guard<std::mutex> lk(mu_);
          final_pull_done_ = t;
        }
        next = std::move(upcoming);
      }
      transport_->publish_stop();
    } catch (const InterruptedError&) {
      if (!stopping()) fail("scheduler interrupted");
      transport_->publish_stop();
    } catch (const std::exception& e) {
      fail(std::string("scheduler failed: ") + e.what());
    }
  }

  // Computes a decision and records which priority-state version fed it
  // (the pipelining instrumentation).
  ScheduleDecision compute_decision(ClockT t, PriorityState* prio) {
    std::uint64_t version = prio ? prio->version : 0;
    ScheduleDecision d = make_decision(t, prio);
    std::lock_guard<std::mutex> lk(mu_);
    result_.decision_inputs.emplace_back(t, version);
    return d;
  }

  ScheduleDecision make_decision(ClockT t, PriorityState* prio) {
    const SchedulerSpec& spec = app_.scheduler;
    if (spec.bootstrap_full_sweep && t == 0)
      return schedule_full_sweep(0, cfg_.workers, spec.dim);
    std::uint64_t seed = mix_seed(cfg_.seed, 0x7363686564ULL, std::uint64_t(t));
    switch (spec.kind) {
      case ScheduleKind::kFixed:
        return schedule_fix(t, cfg_.workers, spec.dim, spec.block_map);
      case ScheduleKind::kSrrp:
        return schedule_srrp(t, cfg_.workers, spec.srrp, *spec.corr, nullptr,
                             seed);
      case ScheduleKind::kPriority:
        return schedule_srrp(t, cfg_.workers, spec.srrp, *spec.corr, prio,
                             seed);
      case ScheduleKind::kEmpty:
        break;
    }
    ScheduleDecision d;
    d.clock = t;
    return d;
  }

  void apply_delay(WorkerId w, Rng& jitter) {
    double ms = 0.0;
    if (!cfg_.worker_delay_ms.empty()) ms += cfg_.worker_delay_ms[w];
    if (cfg_.delay_jitter_ms > 0)
      ms += double(jitter.index(cfg_.delay_jitter_ms + 1));
    if (ms > 0.0)
      std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(ms));
  }

  bool stopping() const { return hub_ && hub_->stop_requested(); }

  // Tolerance stop can leave workers blocked on stragglers that already
  // exited; shutting the store down releases them.
  void wake_after_stop() {
    std::lock_guard<std::mutex> lk(mu_);
    if (stop_thread_.joinable()) return;
    stop_thread_ = std::thread([this] {
      ps_->shutdown();
      transport_->publish_stop();
    });
  }

  void fail(const std::string& why) {
    {
      std::lock_guard<std::mutex> lk(mu_);
      if (first_error_.empty()) first_error_ = why;
    }
    SKIFF_WARN("run aborting: " << why);
    ps_->poison(why);
    transport_->abort(why);
  }

  void request_abort(const std::string& why) {
    if (!workers_.empty() && !joined_) {
      std::lock_guard<std::mutex> lk(mu_);
      if (first_error_.empty() && !done_ok_) first_error_ = why;
    }
    if (!joined_) {
      ps_->shutdown();
      transport_->abort(why);
    }
  }

  // Commits and pull markers travel asynchronously in distributed mode;
  // wait for the shards' watermarks to absorb everything the (already
  // joined) producers sent before tearing the transport down.
  void drain_watermarks() {
    ClockT min_commit;
    ClockT last_pull;
    {
      std::lock_guard<std::mutex> lk(mu_);
      if (!first_error_.empty()) return;
      min_commit = *std::min_element(final_commits_.begin(),
                                     final_commits_.end());
      last_pull = final_pull_done_;
    }
    if (hub_ && hub_->stop_requested() && stop_thread_.joinable())
      return;  // tolerance stop already shut the store down
    ClockT expected = min_commit - 1;
    if (app_.has_pull()) expected = std::min(expected, last_pull);
    auto deadline = std::chrono::steady_clock::now() + std::chrono::seconds(20);
    for (std::uint32_t s = 0; s < ps_->num_shards(); ++s) {
      while (ps_->shard(s).watermark() < expected) {
        if (std::chrono::steady_clock::now() > deadline) {
          SKIFF_WARN("drain timed out waiting for shard " << s);
          return;
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(1));
      }
    }
  }

  void join_all() {
    if (joined_) return;
    for (auto& t : workers_)
      if (t.joinable()) t.join();
    if (scheduler_.joinable()) scheduler_.join();
    if (!workers_.empty()) drain_watermarks();
    // All producers are done; release anything still parked, then drain the
    // hub (joining its eval thread, so no further on_stop can fire).
    ps_->shutdown();
    if (hub_) hub_->finish();
    if (stop_thread_.joinable()) stop_thread_.join();
    transport_->shutdown();
    joined_ = true;
    done_ok_ = true;
  }

  AppContract app_;
  RunConfig cfg_;
  std::unique_ptr<PsServer> ps_;
  std::unique_ptr<Transport> owned_transport_;
  Transport* transport_ = nullptr;
  std::unique_ptr<MetricsHub> hub_;
  std::vector<std::thread> workers_;
  std::thread scheduler_;
  std::thread stop_thread_;
  std::mutex mu_;
  std::string first_error_;
  std::vector<ClockT> final_commits_;
  ClockT final_pull_done_ = -1;
  bool joined_ = false;
  bool done_ok_ = false;
  RunResult result_;
};

// Runs an application to completion in-process. Distributed runs go through
// run_with_mode() (ps_remote.hpp), which assembles the TCP transport.
inline RunResult run(const AppContract& app, const RunConfig& cfg,
                     TransportFactory factory = {}) {
  Engine engine(app, cfg, std::move(factory));
  engine.start();
  return engine.wait();
}

// Observed staleness statistics of a run: the per-read gap between the
// reader's clock and the newest clock whose updates were all guaranteed
// visible to it.
inline std::pair<double, double> observe_staleness(const RunResult& r) {
  return {r.staleness.mean(), r.staleness.variance()};
}

}  // namespace skiff
