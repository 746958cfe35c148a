#pragma once

#include <map>

#include "skiff/common.hpp"

namespace skiff {

// Per-worker committed-iteration counters. Entries are created once at
// registration and only ever move forward; the minimum entry gates
// bounded-staleness reads.
class VectorClock {
 public:
  VectorClock() = default;

  void register_worker(WorkerId w, ClockT initial = 0) {
    if (entries_.count(w)) throw UsageError("worker already registered");
    if (initial < 0) throw UsageError("clock must be non-negative");
    entries_[w] = initial;
  }

  bool has(WorkerId w) const { return entries_.count(w) != 0; }

  ClockT get(WorkerId w) const {
    auto it = entries_.find(w);
    if (it == entries_.end()) throw UsageError("unknown worker id");
    return it->second;
  }

  std::size_t size() const { return entries_.size(); }

  const std::map<WorkerId, ClockT>& entries() const { return entries_; }

 private:
  friend VectorClock tick(VectorClock vc, WorkerId w);
  friend void tick_in_place(VectorClock& vc, WorkerId w);
  std::map<WorkerId, ClockT> entries_;
};

struct StalenessBound {
  ClockT s = 0;  // 0 degenerates to bulk-synchronous execution

  explicit StalenessBound(ClockT value = 0) : s(value) {
    if (value < 0) throw UsageError("staleness bound must be non-negative");
  }
};

inline ClockT min_clock(const VectorClock& vc) {
  if (vc.size() == 0) throw UsageError("min_clock over empty vector clock");
  ClockT m = vc.entries().begin()->second;
  for (const auto& [w, c] : vc.entries()) {
    (void)w;
    if (c < m) m = c;
  }
  return m;
}

// A reader at clock c may proceed iff every worker has committed clock
// c - s - 1; when false the caller must block until ticks make it true.
// Monotone: clocks never decrease, so once permitted, permitted forever.
inline bool ssp_read_permitted(ClockT reader_clock, const StalenessBound& s,
                               const VectorClock& vc) {
  if (reader_clock < 0) throw UsageError("reader clock must be non-negative");
  return min_clock(vc) >= reader_clock - s.s - 1;
}

inline void tick_in_place(VectorClock& vc, WorkerId w) {
  auto it = vc.entries_.find(w);
  if (it == vc.entries_.end()) throw UsageError("tick on unknown worker id");
  ++it->second;
}

inline VectorClock tick(VectorClock vc, WorkerId w) {
  tick_in_place(vc, w);
  return vc;
}

}  // namespace skiff
