// Test-only reference implementations, kept independent of the library
// code paths they check. Expected values in the suites are frozen from
// these oracles (or computed by them inline), never from the code under
// test.
#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "skiff/table.hpp"

namespace oracle {

// ---------------------------------------------------------------------------
// Lasso: brute-force objective and a sequential cyclic coordinate-descent
// reference solver.

inline double lasso_objective_brute(
    const std::vector<std::vector<double>>& columns,
    const std::vector<double>& y, double lambda,
    const std::vector<double>& beta) {
  std::size_t n = y.size();
  std::vector<double> fitted(n, 0.0);
  for (std::size_t j = 0; j < columns.size(); ++j)
    for (std::size_t i = 0; i < n; ++i) fitted[i] += columns[j][i] * beta[j];
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double r = y[i] - fitted[i];
    loss += r * r;
  }
  double pen = 0.0;
  for (double b : beta) pen += std::abs(b);
  return 0.5 * loss + lambda * pen;
}

class LassoCdOracle {
 public:
  LassoCdOracle(const std::vector<std::vector<double>>& columns,
                const std::vector<double>& y, double lambda)
      : columns_(columns),
        y_(y),
        lambda_(lambda),
        beta_(columns.size(), 0.0),
        residual_(y),
        col_sq_(columns.size(), 0.0) {
    for (std::size_t j = 0; j < columns.size(); ++j) {
      double q = 0.0;
      for (double v : columns[j]) q += v * v;
      col_sq_[j] = q;
    }
  }

  // One exact coordinate update of beta_j.
  void step(std::size_t j) {
    double z = 0.0;
    for (std::size_t i = 0; i < y_.size(); ++i)
      z += columns_[j][i] * residual_[i];
    z += beta_[j] * col_sq_[j];
    double shrunk = 0.0;
    if (z > lambda_)
      shrunk = z - lambda_;
    else if (z < -lambda_)
      shrunk = z + lambda_;
    double delta = shrunk - beta_[j];
    if (delta != 0.0)
      for (std::size_t i = 0; i < y_.size(); ++i)
        residual_[i] -= delta * columns_[j][i];
    beta_[j] = shrunk;
  }

  double objective() const {
    double loss = 0.0;
    for (double r : residual_) loss += r * r;
    double pen = 0.0;
    for (double b : beta_) pen += std::abs(b);
    return 0.5 * loss + lambda_ * pen;
  }

  // Cyclic order, one coordinate per clock (clock t touches t mod d);
  // returns the objective after each clock.
  std::vector<double> run_cyclic(std::size_t clocks) {
    std::vector<double> out;
    out.reserve(clocks);
    for (std::size_t t = 0; t < clocks; ++t) {
      step(t % beta_.size());
      out.push_back(objective());
    }
    return out;
  }

  // Full cyclic passes until the objective stalls; returns the final value.
  double solve(std::size_t max_passes = 2000, double tol = 1e-12) {
    double prev = objective();
    for (std::size_t pass = 0; pass < max_passes; ++pass) {
      for (std::size_t j = 0; j < beta_.size(); ++j) step(j);
      double cur = objective();
      if (std::abs(prev - cur) <= tol * std::max(1.0, std::abs(prev)))
        return cur;
      prev = cur;
    }
    return prev;
  }

  const std::vector<double>& beta() const { return beta_; }

 private:
  const std::vector<std::vector<double>>& columns_;
  const std::vector<double>& y_;
  double lambda_;
  std::vector<double> beta_;
  std::vector<double> residual_;
  std::vector<double> col_sq_;
};

// ---------------------------------------------------------------------------
// Re-implementation of the scheduler's proposal draw + greedy dependency
// filter, used to cross-check emitted decisions for a given seed.

inline std::vector<std::uint64_t> srrp_decision_brute(
    const std::vector<std::vector<double>>& unit_columns,
    const std::vector<double>* weights, std::size_t proposal_count,
    std::uint32_t num_workers, double theta, std::uint64_t seed) {
  std::mt19937_64 eng(seed);
  auto uniform01 = [&] { return double(eng() >> 11) * 0x1.0p-53; };
  std::vector<double> w =
      weights ? *weights : std::vector<double>(unit_columns.size(), 1.0);
  std::vector<std::uint64_t> candidates;
  for (std::size_t k = 0; k < proposal_count; ++k) {
    double total = 0.0;
    for (double v : w) total += v;
    double target = uniform01() * total;
    double acc = 0.0;
    std::size_t pick = w.size() - 1;
    for (std::size_t j = 0; j < w.size(); ++j) {
      if (w[j] <= 0.0) continue;
      acc += w[j];
      if (target < acc) {
        pick = j;
        break;
      }
    }
    candidates.push_back(pick);
    w[pick] = 0.0;
  }
  std::vector<std::uint64_t> retained;
  for (std::uint64_t c : candidates) {
    if (retained.size() >= num_workers) break;
    bool ok = true;
    for (std::uint64_t r : retained) {
      double dot = 0.0;
      for (std::size_t i = 0; i < unit_columns[c].size(); ++i)
        dot += unit_columns[c][i] * unit_columns[r][i];
      if (std::abs(dot) > theta) {
        ok = false;
        break;
      }
    }
    if (ok) retained.push_back(c);
  }
  return retained;
}

// ---------------------------------------------------------------------------
// DML: brute objective, finite-difference gradient, and a sequential SGD
// reference driven by an explicit sampling script.

struct DmlInstance {
  std::size_t dim = 0, rank = 0;
  std::vector<std::pair<std::vector<double>, std::vector<double>>> similar;
  std::vector<std::pair<std::vector<double>, std::vector<double>>> dissimilar;
  double lambda = 1.0;
};

inline double dml_objective_brute(const std::vector<double>& l_rowmajor,
                                  const DmlInstance& p) {
  auto lval = [&](std::size_t r, std::size_t c) {
    return l_rowmajor[r * p.dim + c];
  };
  double obj = 0.0;
  for (const auto& [x, y] : p.similar) {
    for (std::size_t r = 0; r < p.rank; ++r) {
      double v = 0.0;
      for (std::size_t c = 0; c < p.dim; ++c) v += lval(r, c) * (x[c] - y[c]);
      obj += v * v;
    }
  }
  for (const auto& [a, b] : p.dissimilar) {
    double norm2 = 0.0;
    for (std::size_t r = 0; r < p.rank; ++r) {
      double v = 0.0;
      for (std::size_t c = 0; c < p.dim; ++c) v += lval(r, c) * (a[c] - b[c]);
      norm2 += v * v;
    }
    if (1.0 - norm2 > 0.0) obj += p.lambda * (1.0 - norm2);
  }
  return obj;
}

// Central finite differences of the batch objective restricted to the
// given batches.
inline std::vector<double> dml_gradient_fd(const std::vector<double>& l_rowmajor,
                                           const DmlInstance& batch,
                                           double h = 1e-6) {
  std::vector<double> g(l_rowmajor.size(), 0.0);
  for (std::size_t k = 0; k < l_rowmajor.size(); ++k) {
    std::vector<double> plus = l_rowmajor, minus = l_rowmajor;
    plus[k] += h;
    minus[k] -= h;
    g[k] = (dml_objective_brute(plus, batch) -
            dml_objective_brute(minus, batch)) /
           (2.0 * h);
  }
  return g;
}

// Sequential SGD given an explicit per-clock sampling script: clock t uses
// script[t] = interleaved (similar index, dissimilar index) pairs. Matches
// the runtime's accumulation order so trajectories compare bit-for-bit.
class DmlSgdOracle {
 public:
  DmlSgdOracle(const DmlInstance& p, double step0, std::size_t minibatch)
      : p_(p), step0_(step0), batch_(minibatch),
        l_(p.rank * p.dim, 0.0) {
    for (std::size_t i = 0; i < p.rank && i < p.dim; ++i)
      l_[i * p.dim + i] = 1.0;
  }

  void clock(std::int64_t t,
             const std::vector<std::pair<std::size_t, std::size_t>>& draws) {
    if (draws.size() != batch_) throw std::invalid_argument("bad script");
    std::vector<double> g(l_.size(), 0.0);
    for (const auto& [si, di] : draws) {
      add_similar(g, p_.similar[si].first, p_.similar[si].second);
      add_dissimilar(g, p_.dissimilar[di].first, p_.dissimilar[di].second);
    }
    double scale = -(step0_ / std::sqrt(double(t + 1))) / double(batch_);
    for (std::size_t k = 0; k < l_.size(); ++k) l_[k] += scale * g[k];
  }

  const std::vector<double>& l() const { return l_; }

 private:
  void add_similar(std::vector<double>& g, const std::vector<double>& x,
                   const std::vector<double>& y) {
    std::vector<double> u(p_.dim);
    for (std::size_t c = 0; c < p_.dim; ++c) u[c] = x[c] - y[c];
    for (std::size_t r = 0; r < p_.rank; ++r) {
      double v = 0.0;
      for (std::size_t c = 0; c < p_.dim; ++c) v += l_[r * p_.dim + c] * u[c];
      double s = 2.0 * v;
      for (std::size_t c = 0; c < p_.dim; ++c) g[r * p_.dim + c] += s * u[c];
    }
  }
  void add_dissimilar(std::vector<double>& g, const std::vector<double>& a,
                      const std::vector<double>& b) {
    std::vector<double> u(p_.dim);
    for (std::size_t c = 0; c < p_.dim; ++c) u[c] = a[c] - b[c];
    std::vector<double> v(p_.rank);
    double norm2 = 0.0;
    for (std::size_t r = 0; r < p_.rank; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < p_.dim; ++c) s += l_[r * p_.dim + c] * u[c];
      v[r] = s;
      norm2 += s * s;
    }
    if (norm2 >= 1.0) return;
    for (std::size_t r = 0; r < p_.rank; ++r) {
      double s = p_.lambda * 2.0 * v[r];
      for (std::size_t c = 0; c < p_.dim; ++c) g[r * p_.dim + c] -= s * u[c];
    }
  }

  const DmlInstance& p_;
  double step0_;
  std::size_t batch_;
  std::vector<double> l_;
};

// ---------------------------------------------------------------------------
// Sequential replay of a merge-ordered op log; the end state must equal the
// table contents (delta conservation with puts as overwrite events).

using CellKey = std::tuple<std::string, skiff::RowId, skiff::ColId>;

inline std::map<CellKey, double> replay_op_log(
    const std::vector<skiff::OpRecord>& ops) {
  std::map<CellKey, double> state;
  for (const auto& op : ops) {
    CellKey key{op.table, op.row, op.col};
    if (op.kind == skiff::OpRecord::Kind::kPut)
      state[key] = op.value;
    else
      state[key] += op.value;
  }
  return state;
}

}  // namespace oracle
