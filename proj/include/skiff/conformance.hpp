#pragma once

#include <atomic>
#include <cmath>
#include <sstream>
#include <thread>
#include <vector>

#include "skiff/ps.hpp"

namespace skiff {

// Scripted-interleaving consistency scenarios. Every delta is a distinct
// power of two, so a read's value decomposes into exactly the set of
// updates it reflects: mandatory bits (everything timestamped at or below
// reader_clock - s - 1, plus the reader's own writes) must be present, and
// any extra bit must belong to an update that was already committed (reads
// may be fresher than the bound, never staler).
struct ScriptOp {
  enum class Kind {
    kInc,
    kPut,
    kCommit,
    kCommitExpectConflict,
    kRead,         // non-blocking; value checked immediately
    kBlockedRead,  // must not return until the marked release op runs
    kRelease,      // commit that releases the pending blocked read
  };
  Kind kind;
  WorkerId worker = 0;
  double value = 0.0;            // kInc / kPut
  std::uint64_t mandatory = 0;   // reads: bits that must be present
  std::uint64_t optional = 0;    // reads: bits that may be present
  bool exact = false;            // reads: compare value instead of bits
  double expect_value = 0.0;
};

struct Scenario {
  std::string name;
  WorkerId workers = 2;
  ClockT staleness = 0;
  std::vector<ScriptOp> ops;
};

struct ScenarioResult {
  std::string name;
  bool pass = true;
  std::string detail;
};

namespace detail {

class ScenarioRun {
 public:
  explicit ScenarioRun(const Scenario& sc) : sc_(sc) {
    PsConfig cfg;
    cfg.num_workers = sc.workers;
    cfg.num_shards = 1;
    cfg.staleness = StalenessBound{sc.staleness};
    cfg.record_op_log = true;
    ps_ = std::make_unique<PsServer>(cfg);
    ps_->create_table({"t", 1, 1, {}});
  }

  ScenarioResult run() {
    std::vector<std::thread> threads;
    for (WorkerId w = 0; w < sc_.workers; ++w)
      threads.emplace_back([this, w] { worker_loop(w); });

    {
      // Watchdog: a deadlocked scenario is a failure, not a hang.
      std::unique_lock<std::mutex> lk(mu_);
      if (!done_cv_.wait_for(lk, std::chrono::seconds(20),
                             [&] { return finished_ == sc_.workers; })) {
        fail("scenario timed out (possible deadlock)");
        ps_->shutdown();
      }
    }
    for (auto& t : threads) t.join();
    if (pending_blocked_.load() != nullptr && result_.pass)
      fail("blocked read never released");
    ScenarioResult out = result_;
    out.name = sc_.name;
    return out;
  }

 private:
  struct BlockedRead {
    std::atomic<bool> done{false};
    std::uint64_t mandatory = 0, optional = 0;
  };

  void worker_loop(WorkerId w) {
    InProcWorkerChannel ch(*ps_);
    PsWorkerHandle handle(w, ps_->registry(), ch);
    for (std::size_t i = 0; i < sc_.ops.size(); ++i) {
      const ScriptOp& op = sc_.ops[i];
      if (op.worker != w) continue;
      if (!wait_turn(i)) break;  // scenario already failed; stop cleanly
      try {
        execute(op, handle);
      } catch (const std::exception& e) {
        fail("op " + std::to_string(i) + ": unexpected error: " + e.what());
        advance_from(i);
        break;
      }
    }
    std::lock_guard<std::mutex> lk(mu_);
    ++finished_;
    done_cv_.notify_all();
  }

  void execute(const ScriptOp& op, PsWorkerHandle& handle) {
    switch (op.kind) {
      case ScriptOp::Kind::kInc:
        handle.inc("t", 0, 0, op.value);
        advance();
        break;
      case ScriptOp::Kind::kPut:
        handle.put("t", 0, 0, op.value);
        advance();
        break;
      case ScriptOp::Kind::kCommit:
        handle.clock_commit();
        advance();
        break;
      case ScriptOp::Kind::kCommitExpectConflict: {
        bool conflicted = false;
        try {
          handle.clock_commit();
        } catch (const ConflictError&) {
          conflicted = true;
        }
        if (!conflicted) fail("expected a put/put conflict error");
        advance();
        break;
      }
      case ScriptOp::Kind::kRead: {
        double got = handle.get("t", 0)[0];
        check_read(op, got);
        advance();
        break;
      }
      case ScriptOp::Kind::kBlockedRead: {
        auto blocked = std::make_shared<BlockedRead>();
        blocked->mandatory = op.mandatory;
        blocked->optional = op.optional;
        pending_blocked_.store(blocked.get());
        blocked_keepalive_ = blocked;
        advance();  // let the rest of the script proceed while we block
        double got = handle.get("t", 0)[0];
        blocked->done.store(true);
        check_read(op, got);
        break;
      }
      case ScriptOp::Kind::kRelease: {
        BlockedRead* blocked = pending_blocked_.load();
        if (!blocked) {
          fail("release op without a pending blocked read");
        } else {
          std::this_thread::sleep_for(std::chrono::milliseconds(40));
          if (blocked->done.load())
            fail("read returned before the straggler committed");
        }
        handle.clock_commit();
        if (blocked) {
          // The read must now complete.
          for (int spin = 0; spin < 200 && !blocked->done.load(); ++spin)
            std::this_thread::sleep_for(std::chrono::milliseconds(5));
          if (!blocked->done.load())
            fail("read did not return after the straggler caught up");
          pending_blocked_.store(nullptr);
        }
        advance();
        break;
      }
    }
  }

  void check_read(const ScriptOp& op, double got) {
    if (op.exact) {
      if (got != op.expect_value) {
        std::ostringstream os;
        os << "read value " << got << ", expected " << op.expect_value;
        fail(os.str());
      }
      return;
    }
    long long rounded = std::llround(got);
    if (double(rounded) != got || rounded < 0) {
      fail("read value is not a bit pattern: " + std::to_string(got));
      return;
    }
    std::uint64_t bits = std::uint64_t(rounded);
    if ((bits & op.mandatory) != op.mandatory)
      fail("read missed mandatory updates: got bits " + std::to_string(bits) +
           ", required " + std::to_string(op.mandatory));
    std::uint64_t allowed = op.mandatory | op.optional;
    if ((bits & ~allowed) != 0)
      fail("read surfaced uncommitted updates: got bits " +
           std::to_string(bits) + ", allowed " + std::to_string(allowed));
  }

  bool wait_turn(std::size_t i) {
    std::unique_lock<std::mutex> lk(mu_);
    turn_cv_.wait(lk, [&] { return turn_ >= i || !result_.pass; });
    return result_.pass;
  }
  void advance() {
    std::lock_guard<std::mutex> lk(mu_);
    ++turn_;
    turn_cv_.notify_all();
  }
  void advance_from(std::size_t i) {
    std::lock_guard<std::mutex> lk(mu_);
    turn_ = std::max(turn_, i + 1);
    turn_cv_.notify_all();
  }
  void fail(const std::string& why) {
    std::lock_guard<std::mutex> lk(mu_);
    if (result_.pass) {
      result_.pass = false;
      result_.detail = why;
    }
    turn_cv_.notify_all();
  }

  const Scenario& sc_;
  std::unique_ptr<PsServer> ps_;
  std::mutex mu_;
  std::condition_variable turn_cv_;
  std::condition_variable done_cv_;
  std::size_t turn_ = 0;
  WorkerId finished_ = 0;
  std::atomic<BlockedRead*> pending_blocked_{nullptr};
  std::shared_ptr<BlockedRead> blocked_keepalive_;
  ScenarioResult result_;
};

}  // namespace detail

inline ScenarioResult run_scenario(const Scenario& sc) {
  detail::ScenarioRun run(sc);
  return run.run();
}

// Deterministic random scenario: every worker incs one distinct power of
// two per clock and commits; the interleaving and read points are drawn
// from the seed. Reads are only placed where the SSP gate is already
// satisfied, with mandatory/optional masks derived from the script prefix.
inline Scenario make_random_scenario(const std::string& name, WorkerId workers,
                                     ClockT staleness, ClockT clocks,
                                     std::uint64_t seed) {
  Scenario sc;
  sc.name = name;
  sc.workers = workers;
  sc.staleness = staleness;
  Rng rng(seed);

  auto bit = [&](WorkerId w, ClockT c) {
    return std::uint64_t(1) << (std::uint64_t(w) * std::uint64_t(clocks) +
                                std::uint64_t(c));
  };

  std::vector<ClockT> committed(workers, 0);  // commit counters
  std::vector<bool> inc_emitted(workers, false);
  std::vector<std::uint64_t> own_bits(workers, 0);

  auto min_committed = [&] {
    ClockT m = committed[0];
    for (ClockT c : committed) m = std::min(m, c);
    return m;
  };

  while (true) {
    std::vector<WorkerId> live;
    for (WorkerId w = 0; w < workers; ++w)
      if (committed[w] < clocks) live.push_back(w);
    if (live.empty()) break;
    WorkerId w = live[std::size_t(rng.index(live.size()))];
    ClockT c = committed[w];

    // Occasionally read before progressing, when the gate permits.
    if (rng.uniform01() < 0.35 && min_committed() >= c - staleness) {
      std::uint64_t mandatory = own_bits[w];
      std::uint64_t optional = 0;
      for (WorkerId v = 0; v < workers; ++v) {
        if (v == w) continue;
        for (ClockT t = 0; t < committed[v]; ++t) {
          if (t <= c - staleness - 1)
            mandatory |= bit(v, t);
          else
            optional |= bit(v, t);
        }
      }
      sc.ops.push_back({ScriptOp::Kind::kRead, w, 0.0, mandatory, optional});
      continue;
    }

    if (!inc_emitted[w]) {
      sc.ops.push_back(
          {ScriptOp::Kind::kInc, w, double(bit(w, c)), 0, 0});
      own_bits[w] |= bit(w, c);
      inc_emitted[w] = true;
    } else {
      sc.ops.push_back({ScriptOp::Kind::kCommit, w, 0.0, 0, 0});
      committed[w] = c + 1;
      inc_emitted[w] = false;
    }
  }
  return sc;
}

// The conformance suite: handcrafted semantics scenarios plus a seeded
// grid of randomized interleavings over 2-4 workers and s in {0,1,2}.
inline std::vector<Scenario> conformance_suite() {
  using K = ScriptOp::Kind;
  std::vector<Scenario> suite;

  {
    // The reader sits at clock 1 with s = 0 and must wait for the
    // straggler's clock-0 updates before returning.
    Scenario sc;
    sc.name = "straggler-blocks-reader";
    sc.workers = 2;
    sc.staleness = 0;
    sc.ops = {
        {K::kInc, 0, 1.0, 0, 0},
        {K::kCommit, 0, 0, 0, 0},
        {K::kBlockedRead, 0, 0.0, 0b11, 0},
        {K::kInc, 1, 2.0, 0, 0},
        {K::kRelease, 1, 0, 0, 0},
    };
    suite.push_back(sc);
  }
  {
    // Same shape at s = 1: reading at clock 2 requires clock-0 updates.
    Scenario sc;
    sc.name = "straggler-blocks-reader-s1";
    sc.workers = 2;
    sc.staleness = 1;
    sc.ops = {
        {K::kInc, 0, 1.0, 0, 0},
        {K::kCommit, 0, 0, 0, 0},
        {K::kInc, 0, 2.0, 0, 0},
        {K::kCommit, 0, 0, 0, 0},
        {K::kBlockedRead, 0, 0.0, 0b111, 0b000},
        {K::kInc, 1, 4.0, 0, 0},
        {K::kRelease, 1, 0, 0, 0},
    };
    suite.push_back(sc);
  }
  {
    // A worker always sees its own buffered writes.
    Scenario sc;
    sc.name = "read-my-writes-uncommitted";
    sc.workers = 2;
    sc.staleness = 0;
    sc.ops = {
        {K::kInc, 0, 1.0, 0, 0},
        {K::kRead, 0, 0.0, 0b1, 0},
    };
    suite.push_back(sc);
  }
  {
    // Reads may be fresher than the bound: the laggard's read at clock 0
    // may (here: will) include the leader's already-merged clock-0 bits.
    Scenario sc;
    sc.name = "fresher-than-bound-allowed";
    sc.workers = 2;
    sc.staleness = 2;
    sc.ops = {
        {K::kInc, 0, 1.0, 0, 0},  {K::kCommit, 0, 0, 0, 0},
        {K::kInc, 1, 4.0, 0, 0},  {K::kCommit, 1, 0, 0, 0},
        {K::kInc, 0, 2.0, 0, 0},  {K::kCommit, 0, 0, 0, 0},
        // w1 at clock 1, s=2: nothing is mandatory except its own bit;
        // everything committed so far is optional.
        {K::kRead, 1, 0.0, 0b100, 0b011},
    };
    suite.push_back(sc);
  }
  {
    // Program order within one writer: put then inc lands as put + delta.
    Scenario sc;
    sc.name = "put-then-inc-program-order";
    sc.workers = 1;
    sc.staleness = 0;
    ScriptOp read{K::kRead, 0, 0, 0, 0};
    read.exact = true;
    read.expect_value = 0.6;
    sc.ops = {
        {K::kInc, 0, 9.0, 0, 0},  // superseded by the put below
        {K::kPut, 0, 0.5, 0, 0},
        {K::kInc, 0, 0.1, 0, 0},
        {K::kCommit, 0, 0, 0, 0},
        read,
    };
    suite.push_back(sc);
  }
  {
    // Conflicting overwrites of one cell in one clock are an error.
    Scenario sc;
    sc.name = "put-put-conflict-detected";
    sc.workers = 2;
    sc.staleness = 0;
    sc.ops = {
        {K::kPut, 0, 1.0, 0, 0},
        {K::kCommit, 0, 0, 0, 0},
        {K::kPut, 1, 2.0, 0, 0},
        {K::kCommitExpectConflict, 1, 0, 0, 0},
    };
    suite.push_back(sc);
  }
  {
    // An empty commit still ticks the clock and releases waiting readers.
    Scenario sc;
    sc.name = "empty-commit-advances-clock";
    sc.workers = 2;
    sc.staleness = 0;
    sc.ops = {
        {K::kInc, 0, 1.0, 0, 0},
        {K::kCommit, 0, 0, 0, 0},
        {K::kBlockedRead, 0, 0.0, 0b1, 0},
        {K::kRelease, 1, 0, 0, 0},  // w1 commits an empty buffer
    };
    suite.push_back(sc);
  }
  {
    // Additive aggregation across workers.
    Scenario sc;
    sc.name = "cross-worker-sum";
    sc.workers = 3;
    sc.staleness = 0;
    sc.ops = {
        {K::kInc, 0, 1.0, 0, 0},  {K::kCommit, 0, 0, 0, 0},
        {K::kInc, 1, 2.0, 0, 0},  {K::kCommit, 1, 0, 0, 0},
        {K::kInc, 2, 4.0, 0, 0},  {K::kCommit, 2, 0, 0, 0},
        {K::kRead, 0, 0.0, 0b111, 0},
    };
    suite.push_back(sc);
  }

  std::uint64_t seed = 0x1b2e4d6fULL;
  for (WorkerId workers : {2, 3, 4})
    for (ClockT s : {0, 1, 2})
      for (int rep = 0; rep < 2; ++rep) {
        std::ostringstream name;
        name << "random-P" << workers << "-s" << s << "-r" << rep;
        suite.push_back(make_random_scenario(
            name.str(), workers, s, /*clocks=*/workers == 4 ? 6 : 8,
            mix_seed(seed, std::uint64_t(workers * 16 + s * 4 + rep))));
      }
  return suite;
}

inline std::vector<ScenarioResult> run_conformance(
    const std::vector<Scenario>& suite) {
  std::vector<ScenarioResult> results;
  results.reserve(suite.size());
  for (const auto& sc : suite) results.push_back(run_scenario(sc));
  return results;
}

}  // namespace skiff
