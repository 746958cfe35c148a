#pragma once

#include <map>
#include <string>
#include <vector>

#include "skiff/common.hpp"

namespace skiff {

// Dense table of rows, all of width row_width. Tables start at zero unless
// an initializer (row-major, num_rows * row_width) is supplied.
struct TableSpec {
  std::string name;
  RowId num_rows = 0;
  ColId row_width = 0;
  std::vector<double> init;  // empty = all zeros

  void validate() const {
    if (name.empty()) throw UsageError("table name must be non-empty");
    if (num_rows == 0 || row_width == 0)
      throw UsageError("table must have rows and positive row width");
    if (!init.empty() && init.size() != num_rows * std::size_t(row_width))
      throw UsageError("table initializer has wrong size");
  }
};

// One additive update batch, timestamped with the producer's clock.
struct UpdateBatch {
  struct Entry {
    RowId row;
    ColId col;
    double delta;
  };
  std::string table;
  std::vector<Entry> entries;
  WorkerId producer = 0;
  ClockT timestamp = 0;
};

// Pending writes of one worker for one clock. put supersedes earlier incs
// to the same cell within the clock; later incs add on top (program order).
struct CellOp {
  bool has_put = false;
  double put_value = 0.0;
  double delta = 0.0;

  void apply_inc(double d) { delta += d; }
  void apply_put(double v) {
    has_put = true;
    put_value = v;
    delta = 0.0;
  }
  double overlay(double base) const {
    return (has_put ? put_value : base) + delta;
  }
};

using RowOps = std::map<ColId, CellOp>;
using TableOps = std::map<RowId, RowOps>;

struct WriteBuffer {
  std::map<std::string, TableOps> tables;

  bool empty() const { return tables.empty(); }

  void inc(const std::string& table, RowId row, ColId col, double delta) {
    tables[table][row][col].apply_inc(delta);
  }
  void put(const std::string& table, RowId row, ColId col, double value) {
    tables[table][row][col].apply_put(value);
  }
};

// Deep copy of one shard's rows at a merge boundary.
using ShardRows = std::map<std::string, std::map<RowId, std::vector<double>>>;

// Full-model copy assembled from all shards at the same clock.
struct ModelSnapshot {
  ClockT clock = 0;
  std::map<std::string, std::map<RowId, std::vector<double>>> tables;

  const std::vector<double>& row(const std::string& table, RowId r) const {
    auto t = tables.find(table);
    if (t == tables.end()) throw UsageError("snapshot: unknown table " + table);
    auto it = t->second.find(r);
    if (it == t->second.end()) throw UsageError("snapshot: unknown row");
    return it->second;
  }

  // Flattens a table whose rows chunk a logical vector of `dim` entries.
  std::vector<double> flatten(const std::string& table, std::size_t dim) const {
    auto t = tables.find(table);
    if (t == tables.end()) throw UsageError("snapshot: unknown table " + table);
    std::vector<double> out;
    out.reserve(dim);
    for (const auto& [r, vals] : t->second) {
      (void)r;
      for (double v : vals) {
        if (out.size() == dim) break;
        out.push_back(v);
      }
    }
    if (out.size() != dim) throw UsageError("snapshot: flatten size mismatch");
    return out;
  }
};

// Merge-ordered record of every applied operation; a sequential replay of
// this log must reproduce the merged table state exactly.
struct OpRecord {
  enum class Kind { kInc, kPut } kind;
  std::string table;
  RowId row;
  ColId col;
  double value;
  bool from_aggregator;
  WorkerId worker;  // meaningful when !from_aggregator
  ClockT clock;
};

}  // namespace skiff
