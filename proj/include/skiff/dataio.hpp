#pragma once

#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "skiff/dml.hpp"
#include "skiff/lasso.hpp"

namespace skiff {

struct ParseError : UsageError {
  ParseError(const std::string& path, std::size_t line, const std::string& what)
      : UsageError(path + ":" + std::to_string(line) + ": " + what) {}
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream is(line);
  while (std::getline(is, field, ',')) out.push_back(field);
  return out;
}

inline double parse_double(const std::string& s, const std::string& path,
                           std::size_t line) {
  try {
    std::size_t used = 0;
    double v = std::stod(s, &used);
    while (used < s.size() && std::isspace(static_cast<unsigned char>(s[used])))
      ++used;
    if (used != s.size())
      throw ParseError(path, line, "non-numeric field '" + s + "'");
    return v;
  } catch (const ParseError&) {
    throw;
  } catch (const std::exception&) {
    throw ParseError(path, line, "non-numeric field '" + s + "'");
  }
}

}  // namespace detail

// Dense CSV: one sample per line, comma-separated floats. Ragged rows and
// non-numeric fields report the offending line number.
inline std::vector<std::vector<double>> ingest_dense_csv(
    const std::string& path, bool has_header = false) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open: " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (has_header && lineno == 1) continue;
    if (line.empty()) continue;
    auto fields = detail::split_csv_line(line);
    std::vector<double> row;
    row.reserve(fields.size());
    for (const auto& f : fields)
      row.push_back(detail::parse_double(f, path, lineno));
    if (!rows.empty() && row.size() != rows.front().size())
      throw ParseError(path, lineno,
                       "ragged row: expected " +
                           std::to_string(rows.front().size()) + " fields, got " +
                           std::to_string(row.size()));
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw UsageError("empty input: " + path);
  return rows;
}

// One value per line (single-column CSV).
inline std::vector<double> ingest_vector(const std::string& path) {
  auto rows = ingest_dense_csv(path);
  std::vector<double> out;
  out.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != 1)
      throw ParseError(path, i + 1, "expected a single value per line");
    out.push_back(rows[i][0]);
  }
  return out;
}

inline std::vector<std::vector<double>> rows_to_columns(
    const std::vector<std::vector<double>>& rows) {
  std::vector<std::vector<double>> cols(rows.front().size(),
                                        std::vector<double>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) cols[j][i] = rows[i][j];
  return cols;
}

// Scale factors applied while standardizing an ingested lasso instance.
struct LassoIngestReport {
  std::vector<double> column_norms;  // pre-normalization 2-norms
  double y_mean = 0.0;
  double y_scale = 1.0;
};

// Builds a standardized problem from raw samples: columns scaled to unit
// norm, y centered and scaled to unit standard deviation.
inline LassoProblem standardize_lasso(std::vector<std::vector<double>> x_rows,
                                      std::vector<double> y, double lambda,
                                      LassoIngestReport* report = nullptr) {
  if (x_rows.size() != y.size())
    throw UsageError("design matrix and response length mismatch");
  auto cols = rows_to_columns(x_rows);
  LassoIngestReport rep;
  for (auto& col : cols) {
    double norm2 = 0.0;
    for (double v : col) norm2 += v * v;
    rep.column_norms.push_back(std::sqrt(norm2));
  }
  double mean = 0.0;
  for (double v : y) mean += v;
  mean /= double(y.size());
  double var = 0.0;
  for (double v : y) var += (v - mean) * (v - mean);
  double scale = y.size() > 1 ? std::sqrt(var / double(y.size() - 1)) : 1.0;
  if (scale <= 0.0) scale = 1.0;
  for (double& v : y) v = (v - mean) / scale;
  rep.y_mean = mean;
  rep.y_scale = scale;
  if (report) *report = rep;
  return LassoProblem::create(std::move(cols), std::move(y), lambda);
}

// Pairs file: one pair per line, label S or D, then 2*dim floats.
inline void ingest_pairs(const std::string& path, DmlProblem& problem) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open: " + path);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream is(line);
    std::string label;
    is >> label;
    if (label != "S" && label != "D")
      throw ParseError(path, lineno, "label must be S or D, got '" + label + "'");
    std::vector<double> vals;
    std::string tok;
    while (is >> tok) vals.push_back(detail::parse_double(tok, path, lineno));
    if (vals.empty() || vals.size() % 2 != 0)
      throw ParseError(path, lineno, "expected 2*dim values after the label");
    std::size_t dim = vals.size() / 2;
    if (problem.dim == 0) problem.dim = dim;
    if (dim != problem.dim)
      throw ParseError(path, lineno,
                       "pair dimension " + std::to_string(dim) +
                           " does not match " + std::to_string(problem.dim));
    std::vector<double> first(vals.begin(), vals.begin() + dim);
    std::vector<double> second(vals.begin() + dim, vals.end());
    if (label == "S")
      problem.similar.emplace_back(std::move(first), std::move(second));
    else
      problem.dissimilar.emplace_back(std::move(first), std::move(second));
  }
  if (problem.similar.empty() && problem.dissimilar.empty())
    throw UsageError("no pairs in " + path);
}

inline void write_dense_csv(const std::string& path,
                            const std::vector<std::vector<double>>& rows) {
  std::ofstream out(path);
  if (!out) throw UsageError("cannot open for writing: " + path);
  out << std::setprecision(17);
  for (const auto& row : rows) {
    for (std::size_t j = 0; j < row.size(); ++j) {
      if (j) out << ',';
      out << row[j];
    }
    out << "\n";
  }
}

inline void write_vector_csv(const std::string& path,
                             const std::vector<double>& values) {
  std::ofstream out(path);
  if (!out) throw UsageError("cannot open for writing: " + path);
  out << std::setprecision(17);
  for (double v : values) out << v << "\n";
}

inline void write_pairs(const std::string& path, const DmlProblem& problem) {
  std::ofstream out(path);
  if (!out) throw UsageError("cannot open for writing: " + path);
  out << std::setprecision(17);
  auto emit = [&](const char* label, const DmlPair& pair) {
    out << label;
    for (double v : pair.first) out << ' ' << v;
    for (double v : pair.second) out << ' ' << v;
    out << "\n";
  };
  for (const auto& p : problem.similar) emit("S", p);
  for (const auto& p : problem.dissimilar) emit("D", p);
}

}  // namespace skiff
