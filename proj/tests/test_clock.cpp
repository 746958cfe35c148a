#include <catch2/catch_amalgamated.hpp>

#include "skiff/clock.hpp"

using namespace skiff;

namespace {

VectorClock make_clock(const std::vector<ClockT>& entries) {
  VectorClock vc;
  for (std::size_t w = 0; w < entries.size(); ++w)
    vc.register_worker(WorkerId(w), entries[w]);
  return vc;
}

}  // namespace

TEST_CASE("min_clock over committed entries") {
  CHECK(min_clock(make_clock({3, 5, 4})) == 3);
  CHECK(min_clock(make_clock({0})) == 0);
  CHECK(min_clock(make_clock({7, 7})) == 7);
  VectorClock empty;
  CHECK_THROWS_AS(min_clock(empty), UsageError);
}

TEST_CASE("ssp read gate evaluates the staleness inequality") {
  CHECK(ssp_read_permitted(5, StalenessBound{2}, make_clock({2, 3})));
  CHECK_FALSE(ssp_read_permitted(5, StalenessBound{2}, make_clock({1, 4})));
  CHECK(ssp_read_permitted(0, StalenessBound{0}, make_clock({0})));
  CHECK_THROWS_AS(ssp_read_permitted(-1, StalenessBound{0}, make_clock({0})),
                  UsageError);
  CHECK_THROWS_AS(StalenessBound{-1}, UsageError);
}

TEST_CASE("tick moves exactly one entry forward") {
  VectorClock vc = make_clock({3, 3});
  VectorClock after = tick(vc, 0);
  CHECK(after.get(0) == 4);
  CHECK(after.get(1) == 3);
  CHECK(min_clock(after) == 3);  // min unchanged until the laggard ticks

  CHECK(tick(make_clock({0}), 0).get(0) == 1);
  CHECK_THROWS_AS(tick(vc, 9), UsageError);
  CHECK_THROWS_AS(vc.get(9), UsageError);
  CHECK_THROWS_AS(
      [] {
        VectorClock d;
        d.register_worker(0);
        d.register_worker(0);
      }(),
      UsageError);
}

TEST_CASE("gate is monotone under any tick interleaving") {
  Rng rng(2024);
  for (int trial = 0; trial < 200; ++trial) {
    WorkerId workers = WorkerId(2 + rng.index(3));
    VectorClock vc = make_clock(std::vector<ClockT>(workers, 0));
    ClockT reader = ClockT(rng.index(6));
    StalenessBound s{ClockT(rng.index(3))};
    bool was_permitted = false;
    for (int step = 0; step < 40; ++step) {
      bool now = ssp_read_permitted(reader, s, vc);
      if (was_permitted) CHECK(now);
      was_permitted = was_permitted || now;
      tick_in_place(vc, WorkerId(rng.index(workers)));
    }
  }
}

TEST_CASE("s = 0 degenerates to bulk-synchronous execution") {
  // Exhaustive over <= 4 workers and clocks <= 6: permitted iff every
  // worker has committed clock >= c - 1.
  for (WorkerId workers = 1; workers <= 4; ++workers) {
    std::vector<ClockT> entries(workers, 0);
    std::function<void(std::size_t)> enumerate = [&](std::size_t w) {
      if (w == workers) {
        VectorClock vc = make_clock(entries);
        for (ClockT c = 0; c <= 6; ++c) {
          bool expect = true;
          for (ClockT e : entries) expect = expect && e >= c - 1;
          CHECK(ssp_read_permitted(c, StalenessBound{0}, vc) == expect);
        }
        return;
      }
      for (ClockT v = 0; v <= 6; ++v) {
        entries[w] = v;
        enumerate(w + 1);
      }
    };
    enumerate(0);
  }
}

TEST_CASE("gate never admits below the bound") {
  // Definitional tautology, exercised over random states.
  Rng rng(77);
  for (int trial = 0; trial < 500; ++trial) {
    WorkerId workers = WorkerId(1 + rng.index(4));
    std::vector<ClockT> entries;
    for (WorkerId w = 0; w < workers; ++w)
      entries.push_back(ClockT(rng.index(8)));
    VectorClock vc = make_clock(entries);
    ClockT c = ClockT(rng.index(8));
    StalenessBound s{ClockT(rng.index(3))};
    if (ssp_read_permitted(c, s, vc)) CHECK(min_clock(vc) >= c - s.s - 1);
  }
}
