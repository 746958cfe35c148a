#pragma once

#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "skiff/common.hpp"

namespace skiff {

// One row per clock: objective progress plus scheduling and staleness
// diagnostics. staleness_* are cumulative over all reads up to the clock;
// epsilon is only populated when the run computed the descent diagnostic.
struct MetricsRecord {
  ClockT clock = 0;
  std::int64_t wall_ms = 0;
  double objective = 0.0;
  std::uint32_t degree = 0;
  double staleness_mean = 0.0;
  double staleness_var = 0.0;
  double epsilon = 0.0;
  bool has_epsilon = false;
};

struct MetricsSeries {
  std::vector<MetricsRecord> records;

  bool empty() const { return records.empty(); }
  const MetricsRecord& back() const { return records.back(); }

  static const char* csv_header() {
    return "clock,wall_ms,objective,degree,staleness_mean,staleness_var,epsilon";
  }

  static std::string csv_row(const MetricsRecord& r) {
    std::ostringstream os;
    os << r.clock << ',' << r.wall_ms << ',' << std::setprecision(17)
       << r.objective << ',' << r.degree << ',' << r.staleness_mean << ','
       << r.staleness_var << ',';
    if (r.has_epsilon) os << r.epsilon;
    return os.str();
  }

  void write_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw UsageError("cannot open for writing: " + path);
    out << csv_header() << "\n";
    for (const auto& r : records) out << csv_row(r) << "\n";
  }

  // Column-wise equality ignoring wall_ms (wall time is never reproducible).
  static bool equal_modulo_walltime(const MetricsSeries& a,
                                    const MetricsSeries& b) {
    if (a.records.size() != b.records.size()) return false;
    for (std::size_t i = 0; i < a.records.size(); ++i) {
      const auto& x = a.records[i];
      const auto& y = b.records[i];
      if (x.clock != y.clock || x.objective != y.objective ||
          x.degree != y.degree || x.staleness_mean != y.staleness_mean ||
          x.staleness_var != y.staleness_var ||
          x.has_epsilon != y.has_epsilon ||
          (x.has_epsilon && x.epsilon != y.epsilon))
        return false;
    }
    return true;
  }
};

}  // namespace skiff
