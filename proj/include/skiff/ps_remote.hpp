#pragma once

#include <memory>
#include <thread>
#include <vector>

#include "skiff/net.hpp"
#include "skiff/runtime.hpp"

namespace skiff {

// TCP front-end for one shard. One connection per (worker, shard) and per
// (scheduler, shard); each connection gets its own handler thread, so an
// SSP-gated read only ever delays its own connection.
class ShardServer {
 public:
  ShardServer(ShardStore& shard, const std::string& host, std::uint16_t port)
      : shard_(shard), listener_(host, port) {
    accept_thread_ = std::thread([this] { accept_loop(); });
  }

  ~ShardServer() { shutdown(); }

  std::uint16_t port() const { return listener_.port(); }

  void shutdown() {
    listener_.close();
    {
      std::lock_guard<std::mutex> lk(mu_);
      for (auto& c : conns_) c->close();
    }
    if (accept_thread_.joinable()) accept_thread_.join();
    for (auto& t : handlers_)
      if (t.joinable()) t.join();
  }

 private:
  void accept_loop() {
    while (auto conn = listener_.accept()) {
      std::shared_ptr<wire::TcpConn> shared = std::move(conn);
      std::lock_guard<std::mutex> lk(mu_);
      conns_.push_back(shared);
      handlers_.emplace_back([this, shared] { handle(shared); });
    }
  }

  void handle(std::shared_ptr<wire::TcpConn> conn) {
    wire::Role role = wire::Role::kWorker;
    try {
      auto first = conn->recv();
      if (!first) return;
      const auto* hello = std::get_if<wire::Hello>(&*first);
      if (!hello || hello->version != wire::kProtocolVersion) {
        SKIFF_WARN("shard " << shard_.shard_id()
                            << ": rejected connection (bad hello)");
        return;
      }
      role = hello->role;
      WriteBuffer pending;
      for (;;) {
        auto m = conn->recv();
        if (!m) return;
        if (const auto* g = std::get_if<wire::GetReq>(&*m)) {
          std::vector<double> vals =
              role == wire::Role::kScheduler
                  ? shard_.agg_read_row(g->table, g->row)
                  : shard_.read_row(g->table, g->row, g->reader);
          conn->send(wire::GetResp{std::move(vals)});
        } else if (const auto* i = std::get_if<wire::Inc>(&*m)) {
          if (role == wire::Role::kScheduler) {
            for (const auto& e : i->entries)
              shard_.agg_inc(i->timestamp, i->table, e.row, e.col, e.delta);
          } else {
            for (const auto& e : i->entries)
              pending.inc(i->table, e.row, e.col, e.delta);
          }
        } else if (const auto* p = std::get_if<wire::Put>(&*m)) {
          if (role == wire::Role::kScheduler)
            shard_.agg_put(p->timestamp, p->table, p->row, p->col, p->value);
          else
            pending.put(p->table, p->row, p->col, p->value);
        } else if (const auto* c = std::get_if<wire::ClockCommit>(&*m)) {
          shard_.stage_commit(c->worker, std::move(pending));
          pending = WriteBuffer{};
        } else if (const auto* pd = std::get_if<wire::PullDone>(&*m)) {
          shard_.pull_done(ClockT(pd->clock));
        } else if (std::get_if<wire::Shutdown>(&*m)) {
          return;
        } else {
          SKIFF_WARN("shard " << shard_.shard_id() << ": unexpected frame");
          return;
        }
      }
    } catch (const std::exception& e) {
      // Interrupted gates and poisoned stores land here; dropping the
      // connection propagates the failure to the peer.
      SKIFF_DEBUG("shard " << shard_.shard_id()
                           << " connection closing: " << e.what());
    }
    conn->close();
  }

  ShardStore& shard_;
  wire::TcpListener listener_;
  std::thread accept_thread_;
  std::mutex mu_;
  std::vector<std::shared_ptr<wire::TcpConn>> conns_;
  std::vector<std::thread> handlers_;
};

inline wire::Decision decision_to_wire(const ScheduleDecision& d) {
  wire::Decision w;
  w.clock = std::uint64_t(d.clock);
  w.degree = d.degree;
  for (const auto& [worker, idxs] : d.assignments)
    w.assignments.emplace_back(worker, idxs);
  return w;
}

inline ScheduleDecision decision_from_wire(const wire::Decision& w) {
  ScheduleDecision d;
  d.clock = ClockT(w.clock);
  d.degree = w.degree;
  for (const auto& [worker, idxs] : w.assignments)
    d.assignments.emplace_back(worker, idxs);
  return d;
}

// Scheduler end of the control channel: accepts one connection per worker,
// fans DECISION frames out, funnels PARTIAL frames into the board.
class SchedServer {
 public:
  SchedServer(const std::string& host, std::uint16_t port, WorkerId workers)
      : listener_(host, port), num_workers_(workers), conns_(workers) {
    accept_thread_ = std::thread([this] { accept_loop(); });
  }

  ~SchedServer() { shutdown(); }

  std::uint16_t port() const { return listener_.port(); }

  void wait_connected(double timeout_s) {
    std::unique_lock<std::mutex> lk(mu_);
    if (!cv_.wait_for(lk, std::chrono::duration<double>(timeout_s),
                      [&] { return connected_ == num_workers_; }))
      throw RunError("workers did not connect to the scheduler channel");
  }

  void publish(const ScheduleDecision& d) {
    wire::Message m = decision_to_wire(d);
    std::lock_guard<std::mutex> lk(mu_);
    for (auto& c : conns_)
      if (c) c->send(m);
  }

  void publish_stop() {
    std::lock_guard<std::mutex> lk(mu_);
    for (auto& c : conns_)
      if (c) c->send(wire::Shutdown{});
  }

  std::vector<PartialPayload> wait_partials(ClockT clock, WorkerId n,
                                            double timeout_s) {
    return partials_.wait_all(clock, n, timeout_s);
  }

  void abort(const std::string& why) { partials_.abort(why); }

  void shutdown() {
    listener_.close();
    {
      std::lock_guard<std::mutex> lk(mu_);
      for (auto& c : conns_)
        if (c) c->close();
    }
    if (accept_thread_.joinable()) accept_thread_.join();
    for (auto& t : readers_)
      if (t.joinable()) t.join();
  }

 private:
  void accept_loop() {
    while (auto conn = listener_.accept()) {
      std::shared_ptr<wire::TcpConn> shared = std::move(conn);
      std::optional<wire::Hello> hello;
      try {
        auto first = shared->recv();
        if (!first) continue;
        const auto* h = std::get_if<wire::Hello>(&*first);
        if (!h || h->version != wire::kProtocolVersion ||
            h->id >= num_workers_)
          continue;
        hello = *h;
      } catch (const std::exception&) {
        continue;
      }
      std::lock_guard<std::mutex> lk(mu_);
      conns_[hello->id] = shared;
      ++connected_;
      readers_.emplace_back([this, shared] { read_loop(shared); });
      cv_.notify_all();
    }
  }

  void read_loop(std::shared_ptr<wire::TcpConn> conn) {
    try {
      for (;;) {
        auto m = conn->recv();
        if (!m) return;
        if (const auto* p = std::get_if<wire::Partial>(&*m)) {
          partials_.put(ClockT(p->clock), p->worker, p->payload);
        } else if (std::get_if<wire::Shutdown>(&*m)) {
          return;
        } else {
          return;
        }
      }
    } catch (const std::exception&) {
    }
  }

  wire::TcpListener listener_;
  WorkerId num_workers_;
  std::thread accept_thread_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::vector<std::shared_ptr<wire::TcpConn>> conns_;
  std::vector<std::thread> readers_;
  WorkerId connected_ = 0;
  PartialBoard partials_;
};

// Worker end of the control channel.
class SchedClient {
 public:
  SchedClient(WorkerId worker, const std::string& host, std::uint16_t port)
      : worker_(worker), conn_(wire::tcp_connect(host, port)) {
    conn_->send(wire::Hello{wire::kProtocolVersion, wire::Role::kWorker, worker});
    reader_ = std::thread([this] { read_loop(); });
  }

  ~SchedClient() { shutdown(); }

  std::optional<ScheduleDecision> wait_decision(ClockT clock) {
    return board_.wait(clock);
  }

  void send_partial(ClockT clock, PartialPayload payload) {
    wire::Partial p;
    p.clock = std::uint64_t(clock);
    p.worker = worker_;
    p.payload = std::move(payload);
    conn_->send(p);
  }

  void abort(const std::string& why) { board_.abort(why); }

  void shutdown() {
    conn_->close();
    if (reader_.joinable()) reader_.join();
  }

 private:
  void read_loop() {
    try {
      for (;;) {
        auto m = conn_->recv();
        if (!m) break;
        if (const auto* d = std::get_if<wire::Decision>(&*m))
          board_.publish(decision_from_wire(*d));
        else if (std::get_if<wire::Shutdown>(&*m))
          break;
        else
          break;
      }
    } catch (const std::exception&) {
    }
    // A closed channel releases any decision wait; real failures surface
    // through the parameter server and the engine's first error.
    board_.publish_stop();
  }

  WorkerId worker_;
  std::unique_ptr<wire::TcpConn> conn_;
  std::thread reader_;
  DecisionBoard board_;
};

class RemoteWorkerChannel : public WorkerChannel {
 public:
  RemoteWorkerChannel(WorkerId worker, const std::string& host,
                      const std::vector<std::uint16_t>& shard_ports)
      : worker_(worker) {
    for (std::uint16_t port : shard_ports) {
      conns_.push_back(wire::tcp_connect(host, port));
      conns_.back()->send(
          wire::Hello{wire::kProtocolVersion, wire::Role::kWorker, worker});
    }
  }

  void close() {
    for (auto& c : conns_) c->close();
  }

  std::vector<double> get_row(const std::string& table, RowId row,
                              WorkerId reader) override {
    auto& conn = *conns_[row % conns_.size()];
    conn.send(wire::GetReq{table, row, reader});
    auto m = conn.recv();
    if (!m) throw InterruptedError("shard connection closed");
    const auto* resp = std::get_if<wire::GetResp>(&*m);
    if (!resp) throw ProtocolError("expected GET_RESP", 0);
    return resp->values;
  }

  void commit(WorkerId worker, WriteBuffer buffer) override {
    std::vector<WriteBuffer> per_shard(conns_.size());
    InProcWorkerChannel::split_by_shard(std::move(buffer), per_shard);
    for (std::size_t s = 0; s < conns_.size(); ++s) {
      auto& conn = *conns_[s];
      wire::Inc incs;
      incs.producer = worker;
      incs.timestamp = clock_;
      for (auto& [table, rows] : per_shard[s].tables) {
        incs.table = table;
        incs.entries.clear();
        for (auto& [row, cols] : rows) {
          for (auto& [col, op] : cols) {
            if (op.has_put) {
              conn.send(wire::Put{table, worker, clock_, row, col, op.put_value});
              if (op.delta != 0.0)
                conn.send(wire::Inc{
                    table, worker, clock_, {{row, col, op.delta}}});
            } else {
              incs.entries.push_back({row, col, op.delta});
            }
          }
        }
        if (!incs.entries.empty()) conn.send(incs);
      }
      conn.send(wire::ClockCommit{worker, std::uint64_t(clock_)});
    }
    ++clock_;
  }

 private:
  WorkerId worker_;
  std::vector<std::unique_ptr<wire::TcpConn>> conns_;
  ClockT clock_ = 0;
};

class RemoteAggChannel : public AggChannel {
 public:
  RemoteAggChannel(const std::string& host,
                   const std::vector<std::uint16_t>& shard_ports) {
    for (std::uint16_t port : shard_ports) {
      conns_.push_back(wire::tcp_connect(host, port));
      conns_.back()->send(
          wire::Hello{wire::kProtocolVersion, wire::Role::kScheduler, 0});
    }
  }

  void close() {
    for (auto& c : conns_) c->close();
  }

  void inc(ClockT clock, const std::string& table, RowId row, ColId col,
           double delta) override {
    conns_[row % conns_.size()]->send(
        wire::Inc{table, 0, clock, {{row, col, delta}}});
  }
  void put(ClockT clock, const std::string& table, RowId row, ColId col,
           double value) override {
    conns_[row % conns_.size()]->send(
        wire::Put{table, 0, clock, row, col, value});
  }
  std::vector<double> read_row(const std::string& table, RowId row) override {
    auto& conn = *conns_[row % conns_.size()];
    conn.send(wire::GetReq{table, row, 0});
    auto m = conn.recv();
    if (!m) throw InterruptedError("shard connection closed");
    const auto* resp = std::get_if<wire::GetResp>(&*m);
    if (!resp) throw ProtocolError("expected GET_RESP", 0);
    return resp->values;
  }
  void pull_done(ClockT clock) override {
    for (auto& c : conns_) c->send(wire::PullDone{std::uint64_t(clock)});
  }

 private:
  std::vector<std::unique_ptr<wire::TcpConn>> conns_;
};

// Full TCP assembly: shard servers, the scheduler channel, and per-worker
// client connections, colocated in-process but speaking only the wire
// protocol.
class DistTransport : public Transport {
 public:
  DistTransport(PsServer& ps, const AppContract& app, const RunConfig& cfg) {
    (void)app;
    std::vector<std::uint16_t> shard_ports;
    for (std::uint32_t s = 0; s < ps.num_shards(); ++s) {
      std::uint16_t port =
          cfg.base_port == 0 ? 0 : std::uint16_t(cfg.base_port + 1 + s);
      shard_servers_.push_back(
          std::make_unique<ShardServer>(ps.shard(s), cfg.host, port));
      shard_ports.push_back(shard_servers_.back()->port());
    }
    sched_server_ =
        std::make_unique<SchedServer>(cfg.host, cfg.base_port, cfg.workers);
    for (WorkerId w = 0; w < cfg.workers; ++w) {
      worker_channels_.push_back(
          std::make_unique<RemoteWorkerChannel>(w, cfg.host, shard_ports));
      sched_clients_.push_back(
          std::make_unique<SchedClient>(w, cfg.host, sched_server_->port()));
    }
    agg_channel_ = std::make_unique<RemoteAggChannel>(cfg.host, shard_ports);
    sched_server_->wait_connected(30.0);
    SKIFF_INFO("distributed transport up: scheduler port "
               << sched_server_->port() << ", " << shard_ports.size()
               << " shard port(s)");
  }

  ~DistTransport() { shutdown(); }

  WorkerChannel& worker_channel(WorkerId w) override {
    return *worker_channels_[w];
  }
  AggChannel& agg_channel() override { return *agg_channel_; }

  std::optional<ScheduleDecision> wait_decision(WorkerId w, ClockT c) override {
    return sched_clients_[w]->wait_decision(c);
  }
  void send_partial(WorkerId w, ClockT c, PartialPayload p) override {
    sched_clients_[w]->send_partial(c, std::move(p));
  }
  void publish_decision(const ScheduleDecision& d) override {
    sched_server_->publish(d);
  }
  void publish_stop() override { sched_server_->publish_stop(); }
  std::vector<PartialPayload> wait_partials(ClockT c, WorkerId n,
                                            double timeout_s) override {
    return sched_server_->wait_partials(c, n, timeout_s);
  }
  void abort(const std::string& why) override {
    sched_server_->abort(why);
    for (auto& c : sched_clients_) c->abort(why);
  }
  void shutdown() override {
    if (shut_) return;
    shut_ = true;
    for (auto& c : worker_channels_) c->close();
    if (agg_channel_) agg_channel_->close();
    for (auto& c : sched_clients_) c->shutdown();
    if (sched_server_) sched_server_->shutdown();
    for (auto& s : shard_servers_) s->shutdown();
  }

 private:
  std::vector<std::unique_ptr<ShardServer>> shard_servers_;
  std::unique_ptr<SchedServer> sched_server_;
  std::vector<std::unique_ptr<RemoteWorkerChannel>> worker_channels_;
  std::vector<std::unique_ptr<SchedClient>> sched_clients_;
  std::unique_ptr<RemoteAggChannel> agg_channel_;
  bool shut_ = false;
};

inline TransportFactory tcp_transport_factory() {
  return [](PsServer& ps, const AppContract& app, const RunConfig& cfg) {
    return std::unique_ptr<Transport>(new DistTransport(ps, app, cfg));
  };
}

// Mode dispatch used by the harness: in-process direct calls, or the same
// run carried over TCP.
inline RunResult run_with_mode(const AppContract& app, const RunConfig& cfg) {
  if (cfg.mode == RunMode::kDistributed)
    return run(app, cfg, tcp_transport_factory());
  return run(app, cfg);
}

}  // namespace skiff
