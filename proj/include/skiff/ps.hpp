#pragma once

#include <algorithm>
#include <condition_variable>
#include <functional>
#include <map>
#include <tuple>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "skiff/clock.hpp"
#include "skiff/common.hpp"
#include "skiff/table.hpp"

namespace skiff {

struct StalenessStats {
  std::uint64_t reads = 0;
  double sum = 0.0;
  double sum_sq = 0.0;

  void record(double g) {
    ++reads;
    sum += g;
    sum_sq += g * g;
  }
  void merge(const StalenessStats& o) {
    reads += o.reads;
    sum += o.sum;
    sum_sq += o.sum_sq;
  }
  double mean() const { return reads ? sum / double(reads) : 0.0; }
  double variance() const {
    if (reads == 0) return 0.0;
    double m = mean();
    return sum_sq / double(reads) - m * m;
  }
};

struct PsConfig {
  WorkerId num_workers = 1;
  std::uint32_t num_shards = 1;
  StalenessBound staleness{0};
  // Model-parallel runs aggregate at a pull barrier each clock; a clock is
  // only considered complete (and readable) once the aggregator signalled it.
  bool expects_pull = false;
  bool record_op_log = false;
};

// Callback invoked whenever a shard finishes merging a clock; receives a
// deep copy of the shard's rows plus the shard's read-staleness stats as of
// the merge. Must be cheap (runs under the shard lock).
using ShardMergeCb = std::function<void(std::uint32_t shard, ClockT clock,
                                        ShardRows rows, StalenessStats stats)>;

// One server shard: rows are assigned by row-id modulo shard count.
//
// Commits stage per-worker buffers keyed by the producing clock; a clock
// merges into the table only once every worker committed it (and, when a
// pull barrier exists, the aggregator signalled completion). The merge
// watermark therefore equals the highest clock whose updates are all
// visible, which is what reads gate on: a reader at clock c waits until
// watermark >= c - s - 1, so it can never miss an update timestamped
// c - s - 1 or older. Merges apply buffers in worker-id order, then
// aggregator ops in arrival order, making the merged state independent of
// thread timing.
class ShardStore {
 public:
  ShardStore(std::uint32_t shard_id, const PsConfig& cfg)
      : shard_id_(shard_id), cfg_(cfg) {
    for (WorkerId w = 0; w < cfg.num_workers; ++w) counters_.register_worker(w);
  }

  std::uint32_t shard_id() const { return shard_id_; }

  void create_table(const TableSpec& spec) {
    std::lock_guard<std::mutex> lk(mu_);
    if (tables_.count(spec.name)) throw UsageError("table exists: " + spec.name);
    Table t;
    t.row_width = spec.row_width;
    for (RowId r = shard_id_; r < spec.num_rows; r += cfg_.num_shards) {
      std::vector<double> row(spec.row_width, 0.0);
      if (!spec.init.empty()) {
        for (ColId c = 0; c < spec.row_width; ++c)
          row[c] = spec.init[r * spec.row_width + c];
      }
      t.rows.emplace(r, std::move(row));
    }
    tables_.emplace(spec.name, std::move(t));
  }

  // Stages the worker's buffered writes under its current clock and ticks
  // its committed-clock entry. Publishing is atomic: nothing from the
  // buffer is readable by others until the whole clock merges.
  void stage_commit(WorkerId worker, WriteBuffer buffer) {
    std::unique_lock<std::mutex> lk(mu_);
    check_live();
    ClockT clock = counters_.get(worker);
    staged_[clock][worker] = std::move(buffer);
    tick_in_place(counters_, worker);
    advance_locked();
    cv_.notify_all();
  }

  void agg_inc(ClockT clock, const std::string& table, RowId row, ColId col,
               double delta) {
    std::lock_guard<std::mutex> lk(mu_);
    check_live();
    if (clock <= watermark_) throw UsageError("aggregator write to merged clock");
    agg_ops_[clock].push_back({false, table, row, col, delta});
  }

  void agg_put(ClockT clock, const std::string& table, RowId row, ColId col,
               double value) {
    std::lock_guard<std::mutex> lk(mu_);
    check_live();
    if (clock <= watermark_) throw UsageError("aggregator write to merged clock");
    agg_ops_[clock].push_back({true, table, row, col, value});
  }

  // Marks the pull barrier for `clock` complete; no further aggregator ops
  // for that clock may arrive afterwards.
  void pull_done(ClockT clock) {
    std::unique_lock<std::mutex> lk(mu_);
    check_live();
    if (clock != pull_done_through_ + 1)
      throw UsageError("pull_done out of order");
    pull_done_through_ = clock;
    advance_locked();
    cv_.notify_all();
  }

  // Blocking SSP read. Returns the merged row overlaid with the reader's
  // own committed-but-unmerged buffers (read-my-writes for committed state;
  // the handle overlays uncommitted writes on top).
  std::vector<double> read_row(const std::string& table, RowId row,
                               WorkerId reader) {
    std::unique_lock<std::mutex> lk(mu_);
    const Table& t = find_table(table);
    auto rit = t.rows.find(row);
    if (rit == t.rows.end())
      throw UsageError("unknown row " + std::to_string(row) + " in " + table);

    ClockT reader_clock = counters_.get(reader);
    ClockT needed = reader_clock - cfg_.staleness.s - 1;
    cv_.wait(lk, [&] {
      return shutdown_ || !error_.empty() || watermark_ >= needed;
    });
    if (shutdown_) throw InterruptedError("read interrupted by shutdown");
    if (!error_.empty()) throw RunError(error_);

    staleness_.record(double(reader_clock - 1 - watermark_));

    std::vector<double> out = rit->second;
    // Committed clocks above the watermark: only the reader's own are
    // overlaid, so no foreign update is ever half-visible.
    for (auto it = staged_.upper_bound(watermark_); it != staged_.end(); ++it) {
      auto bit = it->second.find(reader);
      if (bit == it->second.end()) continue;
      overlay_row(bit->second, table, row, out);
    }
    return out;
  }

  // Aggregator read: no staleness gate (the scheduler sees current merged
  // state plus its own pending ops).
  std::vector<double> agg_read_row(const std::string& table, RowId row) {
    std::lock_guard<std::mutex> lk(mu_);
    check_live();
    const Table& t = find_table(table);
    auto rit = t.rows.find(row);
    if (rit == t.rows.end())
      throw UsageError("unknown row " + std::to_string(row) + " in " + table);
    std::vector<double> out = rit->second;
    for (const auto& [clk, ops] : agg_ops_) {
      (void)clk;
      for (const AggOp& op : ops) {
        if (op.table != table || op.row != row) continue;
        if (op.is_put)
          out[op.col] = op.value;
        else
          out[op.col] += op.value;
      }
    }
    return out;
  }

  bool owns_row(const std::string& table, RowId row) const {
    std::lock_guard<std::mutex> lk(mu_);
    auto it = tables_.find(table);
    return it != tables_.end() && it->second.rows.count(row) != 0;
  }

  ClockT watermark() const {
    std::lock_guard<std::mutex> lk(mu_);
    return watermark_;
  }

  ClockT min_commit_clock() const {
    std::lock_guard<std::mutex> lk(mu_);
    return min_clock(counters_);
  }

  ClockT worker_clock(WorkerId w) const {
    std::lock_guard<std::mutex> lk(mu_);
    return counters_.get(w);
  }

  StalenessStats staleness_stats() const {
    std::lock_guard<std::mutex> lk(mu_);
    return staleness_;
  }

  std::vector<OpRecord> op_log() const {
    std::lock_guard<std::mutex> lk(mu_);
    return op_log_;
  }

  void set_merge_cb(ShardMergeCb cb) {
    std::lock_guard<std::mutex> lk(mu_);
    merge_cb_ = std::move(cb);
  }

  void shutdown() {
    std::lock_guard<std::mutex> lk(mu_);
    shutdown_ = true;
    cv_.notify_all();
  }

  // Marks the store failed; blocked and future calls raise RunError.
  void poison(const std::string& why) {
    std::lock_guard<std::mutex> lk(mu_);
    if (error_.empty()) error_ = why;
    cv_.notify_all();
  }

 private:
  struct Table {
    ColId row_width = 0;
    std::map<RowId, std::vector<double>> rows;
  };
  struct AggOp {
    bool is_put;
    std::string table;
    RowId row;
    ColId col;
    double value;
  };

  void check_live() const {
    if (shutdown_) throw InterruptedError("parameter server shut down");
    if (!error_.empty()) throw RunError(error_);
  }

  const Table& find_table(const std::string& name) const {
    auto it = tables_.find(name);
    if (it == tables_.end()) throw UsageError("unknown table: " + name);
    return it->second;
  }

  static void overlay_row(const WriteBuffer& buf, const std::string& table,
                          RowId row, std::vector<double>& out) {
    auto tit = buf.tables.find(table);
    if (tit == buf.tables.end()) return;
    auto rit = tit->second.find(row);
    if (rit == tit->second.end()) return;
    for (const auto& [col, op] : rit->second) out[col] = op.overlay(out[col]);
  }

  double& cell(const std::string& table, RowId row, ColId col) {
    auto tit = tables_.find(table);
    if (tit == tables_.end()) throw UsageError("unknown table: " + table);
    auto rit = tit->second.rows.find(row);
    if (rit == tit->second.rows.end())
      throw UsageError("unknown row " + std::to_string(row) + " in " + table);
    if (col >= tit->second.row_width) throw UsageError("column out of range");
    return rit->second[col];
  }

  // Merges every fully-committed clock just above the watermark.
  void advance_locked() {
    for (;;) {
      ClockT next = watermark_ + 1;
      if (min_clock(counters_) < next + 1) return;
      if (cfg_.expects_pull && pull_done_through_ < next) return;
      merge_clock_locked(next);
      watermark_ = next;
      if (merge_cb_) {
        ShardRows copy;
        for (const auto& [name, t] : tables_) copy[name] = t.rows;
        merge_cb_(shard_id_, next, std::move(copy), staleness_);
      }
    }
  }

  void merge_clock_locked(ClockT clock) {
    std::map<std::tuple<std::string, RowId, ColId>, WorkerId> put_owner;
    auto sit = staged_.find(clock);
    if (sit != staged_.end()) {
      for (auto& [worker, buf] : sit->second) {
        for (auto& [table, rows] : buf.tables) {
          for (auto& [row, cols] : rows) {
            for (auto& [col, op] : cols) {
              double& c = cell(table, row, col);
              if (op.has_put) {
                auto key = std::make_tuple(table, row, col);
                auto [it, fresh] = put_owner.emplace(key, worker);
                if (!fresh && it->second != worker) {
                  error_ = "conflicting puts to " + table + "[" +
                           std::to_string(row) + "," + std::to_string(col) +
                           "] in clock " + std::to_string(clock);
                  cv_.notify_all();
                  throw ConflictError(error_);
                }
                c = op.put_value;
                log_op(OpRecord::Kind::kPut, table, row, col, op.put_value,
                       false, worker, clock);
              }
              if (op.delta != 0.0 || !op.has_put) {
                c += op.delta;
                log_op(OpRecord::Kind::kInc, table, row, col, op.delta, false,
                       worker, clock);
              }
            }
          }
        }
      }
      staged_.erase(sit);
    }
    auto ait = agg_ops_.find(clock);
    if (ait != agg_ops_.end()) {
      for (const AggOp& op : ait->second) {
        double& c = cell(op.table, op.row, op.col);
        if (op.is_put) {
          auto key = std::make_tuple(op.table, op.row, op.col);
          auto it = put_owner.find(key);
          if (it != put_owner.end()) {
            error_ = "aggregator put conflicts with worker put in clock " +
                     std::to_string(clock);
            cv_.notify_all();
            throw ConflictError(error_);
          }
          c = op.value;
          log_op(OpRecord::Kind::kPut, op.table, op.row, op.col, op.value,
                 true, 0, clock);
        } else {
          c += op.value;
          log_op(OpRecord::Kind::kInc, op.table, op.row, op.col, op.value,
                 true, 0, clock);
        }
      }
      agg_ops_.erase(ait);
    }
  }

  void log_op(OpRecord::Kind kind, const std::string& table, RowId row,
              ColId col, double value, bool agg, WorkerId worker,
              ClockT clock) {
    if (!cfg_.record_op_log) return;
    op_log_.push_back({kind, table, row, col, value, agg, worker, clock});
  }

  const std::uint32_t shard_id_;
  const PsConfig cfg_;

  mutable std::mutex mu_;
  std::condition_variable cv_;

  std::map<std::string, Table> tables_;
  VectorClock counters_;
  ClockT watermark_ = -1;
  ClockT pull_done_through_ = -1;
  std::map<ClockT, std::map<WorkerId, WriteBuffer>> staged_;
  std::map<ClockT, std::vector<AggOp>> agg_ops_;
  StalenessStats staleness_;
  std::vector<OpRecord> op_log_;
  ShardMergeCb merge_cb_;
  bool shutdown_ = false;
  std::string error_;
};

struct TableInfo {
  RowId num_rows = 0;
  ColId row_width = 0;
};
using TableRegistry = std::map<std::string, TableInfo>;

// The sharded model store plus the client-side handles used by workers and
// the aggregator. In-process callers hit the shards directly; distributed
// mode drives the same shard objects through the wire protocol.
class PsServer {
 public:
  explicit PsServer(const PsConfig& cfg) : cfg_(cfg) {
    if (cfg.num_workers == 0) throw UsageError("need at least one worker");
    if (cfg.num_shards == 0) throw UsageError("need at least one shard");
    for (std::uint32_t s = 0; s < cfg.num_shards; ++s)
      shards_.push_back(std::make_unique<ShardStore>(s, cfg));
  }

  const PsConfig& config() const { return cfg_; }

  void create_table(const TableSpec& spec) {
    spec.validate();
    for (auto& s : shards_) s->create_table(spec);
    registry_[spec.name] = {spec.num_rows, spec.row_width};
  }

  const TableRegistry& registry() const { return registry_; }

  std::uint32_t shard_of(RowId row) const {
    return std::uint32_t(row % cfg_.num_shards);
  }

  ShardStore& shard(std::uint32_t i) { return *shards_.at(i); }
  std::uint32_t num_shards() const { return cfg_.num_shards; }

  void set_merge_cb(const ShardMergeCb& cb) {
    for (auto& s : shards_) s->set_merge_cb(cb);
  }

  void shutdown() {
    for (auto& s : shards_) s->shutdown();
  }

  void poison(const std::string& why) {
    for (auto& s : shards_) s->poison(why);
  }

  StalenessStats staleness_stats() const {
    StalenessStats total;
    for (const auto& s : shards_) total.merge(s->staleness_stats());
    return total;
  }

  // All-shards committed floor (min over shards of min over workers).
  ClockT min_commit_clock() const {
    ClockT m = shards_.front()->min_commit_clock();
    for (const auto& s : shards_) m = std::min(m, s->min_commit_clock());
    return m;
  }

 private:
  PsConfig cfg_;
  std::vector<std::unique_ptr<ShardStore>> shards_;
  TableRegistry registry_;
};

// Transport-independent view of the store, one per worker. The uncommitted
// write buffer lives here: a worker always sees its own writes.
class WorkerChannel {
 public:
  virtual ~WorkerChannel() = default;
  virtual std::vector<double> get_row(const std::string& table, RowId row,
                                      WorkerId reader) = 0;
  // Splits the buffer by shard and commits everywhere (empty shards too:
  // the tick must reach every shard).
  virtual void commit(WorkerId worker, WriteBuffer buffer) = 0;
};

class AggChannel {
 public:
  virtual ~AggChannel() = default;
  virtual void inc(ClockT clock, const std::string& table, RowId row,
                   ColId col, double delta) = 0;
  virtual void put(ClockT clock, const std::string& table, RowId row,
                   ColId col, double value) = 0;
  virtual std::vector<double> read_row(const std::string& table, RowId row) = 0;
  // Returns only after every shard has the clock's aggregator ops staged
  // and the barrier marked.
  virtual void pull_done(ClockT clock) = 0;
};

class InProcWorkerChannel : public WorkerChannel {
 public:
  explicit InProcWorkerChannel(PsServer& server) : server_(server) {}

  std::vector<double> get_row(const std::string& table, RowId row,
                              WorkerId reader) override {
    return server_.shard(server_.shard_of(row)).read_row(table, row, reader);
  }

  void commit(WorkerId worker, WriteBuffer buffer) override {
    std::vector<WriteBuffer> per_shard(server_.num_shards());
    split_by_shard(std::move(buffer), per_shard);
    for (std::uint32_t s = 0; s < server_.num_shards(); ++s)
      server_.shard(s).stage_commit(worker, std::move(per_shard[s]));
  }

  static void split_by_shard(WriteBuffer buffer,
                             std::vector<WriteBuffer>& per_shard) {
    for (auto& [table, rows] : buffer.tables)
      for (auto& [row, cols] : rows)
        per_shard[row % per_shard.size()].tables[table][row] = std::move(cols);
  }

 private:
  PsServer& server_;
};

class InProcAggChannel : public AggChannel {
 public:
  explicit InProcAggChannel(PsServer& server) : server_(server) {}

  void inc(ClockT clock, const std::string& table, RowId row, ColId col,
           double delta) override {
    server_.shard(server_.shard_of(row)).agg_inc(clock, table, row, col, delta);
  }
  void put(ClockT clock, const std::string& table, RowId row, ColId col,
           double value) override {
    server_.shard(server_.shard_of(row)).agg_put(clock, table, row, col, value);
  }
  std::vector<double> read_row(const std::string& table, RowId row) override {
    return server_.shard(server_.shard_of(row)).agg_read_row(table, row);
  }
  void pull_done(ClockT clock) override {
    for (std::uint32_t s = 0; s < server_.num_shards(); ++s)
      server_.shard(s).pull_done(clock);
  }

 private:
  PsServer& server_;
};

// PS.get / PS.inc / PS.put / clock_commit, as seen by one worker.
class PsWorkerHandle {
 public:
  PsWorkerHandle(WorkerId worker, TableRegistry registry, WorkerChannel& ch)
      : worker_(worker), registry_(std::move(registry)), ch_(&ch) {}

  WorkerId worker() const { return worker_; }

  std::vector<double> get(const std::string& table, RowId row) {
    validate(table, row, 0);
    std::vector<double> out = ch_->get_row(table, row, worker_);
    auto tit = buf_.tables.find(table);
    if (tit != buf_.tables.end()) {
      auto rit = tit->second.find(row);
      if (rit != tit->second.end())
        for (const auto& [col, op] : rit->second) out[col] = op.overlay(out[col]);
    }
    return out;
  }

  void inc(const std::string& table, RowId row, ColId col, double delta) {
    validate(table, row, col);
    buf_.inc(table, row, col, delta);
  }

  void inc_batch(const UpdateBatch& batch) {
    for (const auto& e : batch.entries)
      inc(batch.table, e.row, e.col, e.delta);
  }

  void put(const std::string& table, RowId row, ColId col, double value) {
    validate(table, row, col);
    buf_.put(table, row, col, value);
  }

  // Publishes this clock's buffered writes atomically and ticks the clock.
  void clock_commit() {
    WriteBuffer out;
    std::swap(out, buf_);
    ch_->commit(worker_, std::move(out));
  }

 private:
  void validate(const std::string& table, RowId row, ColId col) const {
    auto it = registry_.find(table);
    if (it == registry_.end()) throw UsageError("unknown table: " + table);
    if (row >= it->second.num_rows) throw UsageError("row out of range");
    if (col >= it->second.row_width) throw UsageError("column out of range");
  }

  WorkerId worker_;
  TableRegistry registry_;
  WorkerChannel* ch_;
  WriteBuffer buf_;
};

// Scheduler-side handle used by pull(): overwrites scheduled cells and
// marks the clock's aggregation complete.
class PsAggHandle {
 public:
  PsAggHandle(TableRegistry registry, AggChannel& ch)
      : registry_(std::move(registry)), ch_(&ch) {}

  std::vector<double> get(const std::string& table, RowId row) {
    validate(table, row, 0);
    return ch_->read_row(table, row);
  }
  void inc(ClockT clock, const std::string& table, RowId row, ColId col,
           double delta) {
    validate(table, row, col);
    ch_->inc(clock, table, row, col, delta);
  }
  void put(ClockT clock, const std::string& table, RowId row, ColId col,
           double value) {
    validate(table, row, col);
    ch_->put(clock, table, row, col, value);
  }
  void pull_done(ClockT clock) { ch_->pull_done(clock); }

 private:
  void validate(const std::string& table, RowId row, ColId col) const {
    auto it = registry_.find(table);
    if (it == registry_.end()) throw UsageError("unknown table: " + table);
    if (row >= it->second.num_rows) throw UsageError("row out of range");
    if (col >= it->second.row_width) throw UsageError("column out of range");
  }

  TableRegistry registry_;
  AggChannel* ch_;
};

}  // namespace skiff
