#pragma once

#include <algorithm>
#include <cmath>
#include <list>
#include <numeric>
#include <unordered_map>
#include <vector>

#include "skiff/common.hpp"

namespace skiff {

// Which parameter indices each worker updates in one clock. Indices within
// a decision are pairwise distinct; under the dependency-checked policy
// every retained pair (a, b) satisfies |x_a . x_b| <= theta.
struct ScheduleDecision {
  ClockT clock = 0;
  std::vector<std::pair<WorkerId, std::vector<std::uint64_t>>> assignments;
  std::uint32_t degree = 0;

  std::vector<std::uint64_t> all_indices() const {
    std::vector<std::uint64_t> out;
    for (const auto& [w, idxs] : assignments) {
      (void)w;
      out.insert(out.end(), idxs.begin(), idxs.end());
    }
    return out;
  }
};

// Unit-norm feature columns plus a bounded cache of pairwise correlations.
// Full materialization of the correlation matrix is deliberately avoided;
// the cache holds the pairs the scheduler actually touched (LRU eviction).
class CorrelationIndex {
 public:
  explicit CorrelationIndex(std::vector<std::vector<double>> columns,
                            std::size_t cache_capacity = 10'000'000)
      : columns_(std::move(columns)), cache_capacity_(cache_capacity) {
    for (auto& col : columns_) {
      double norm2 = 0.0;
      for (double v : col) norm2 += v * v;
      if (norm2 <= 0.0) throw UsageError("zero feature column");
      double inv = 1.0 / std::sqrt(norm2);
      for (double& v : col) v *= inv;
    }
  }

  std::size_t dim() const { return columns_.size(); }
  std::size_t num_samples() const {
    return columns_.empty() ? 0 : columns_.front().size();
  }
  const std::vector<double>& column(std::size_t j) const { return columns_[j]; }

  double correlation(std::size_t i, std::size_t j) const {
    if (i >= dim() || j >= dim()) throw UsageError("feature index out of range");
    if (i == j) return 1.0;
    std::uint64_t key = pair_key(i, j);
    auto it = cache_.find(key);
    if (it != cache_.end()) {
      lru_.splice(lru_.begin(), lru_, it->second.second);
      return it->second.first;
    }
    const auto& a = columns_[i];
    const auto& b = columns_[j];
    double dot = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) dot += a[k] * b[k];
    if (cache_.size() >= cache_capacity_) {
      cache_.erase(lru_.back());
      lru_.pop_back();
    }
    lru_.push_front(key);
    cache_.emplace(key, std::make_pair(dot, lru_.begin()));
    return dot;
  }

  std::size_t cache_size() const { return cache_.size(); }

 private:
  static std::uint64_t pair_key(std::size_t i, std::size_t j) {
    if (i > j) std::swap(i, j);
    return (std::uint64_t(i) << 32) | std::uint64_t(j);
  }

  std::vector<std::vector<double>> columns_;
  std::size_t cache_capacity_;
  mutable std::unordered_map<
      std::uint64_t, std::pair<double, std::list<std::uint64_t>::iterator>>
      cache_;
  mutable std::list<std::uint64_t> lru_;
};

// Convergence-weighted sampling weights: weights[j] tracks the squared
// last change of parameter j plus a floor eta, so converged coordinates
// keep a non-zero draw probability. Never-updated coordinates start at
// 1 + eta so the first passes touch everything.
struct PriorityState {
  std::vector<double> weights;
  double eta = 0.0;
  std::uint64_t version = 0;  // bumped once per applied pull

  PriorityState() = default;
  PriorityState(std::size_t dim, double eta_in) : eta(eta_in) {
    if (eta_in <= 0.0) throw UsageError("eta must be positive");
    weights.assign(dim, 1.0 + eta_in);
  }

  void update(std::size_t j, double change) {
    weights.at(j) = change * change + eta;
  }
};

// Draws `count` distinct indices, probability proportional to `weights`,
// sequentially without replacement.
inline std::vector<std::uint64_t> weighted_draw_without_replacement(
    const std::vector<double>& weights, std::size_t count, Rng& rng) {
  if (count > weights.size())
    throw UsageError("draw count exceeds dimension");
  std::vector<double> w = weights;
  std::vector<std::uint64_t> out;
  out.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    double total = std::accumulate(w.begin(), w.end(), 0.0);
    double target = rng.uniform01() * total;
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
    out.push_back(pick);
    w[pick] = 0.0;
  }
  return out;
}

// Q distinct indices sampled proportional to the priority weights.
inline std::vector<std::uint64_t> schedule_priority_draw(
    const PriorityState& prio, std::size_t count, std::uint64_t seed) {
  Rng rng(seed);
  return weighted_draw_without_replacement(prio.weights, count, rng);
}

// Pre-determined dispatch: worker p walks its own block round-robin, one
// index per clock. An empty block yields an empty assignment.
inline ScheduleDecision schedule_fix(
    ClockT clock, WorkerId num_workers, std::size_t dim,
    const std::vector<std::vector<std::uint64_t>>& block_map) {
  if (block_map.size() != num_workers)
    throw UsageError("block map must have one block per worker");
  std::vector<bool> seen(dim, false);
  std::size_t total = 0;
  for (const auto& block : block_map)
    for (std::uint64_t j : block) {
      if (j >= dim || seen[j]) throw UsageError("block map is not a partition");
      seen[j] = true;
      ++total;
    }
  if (total != dim) throw UsageError("block map is not a partition");

  ScheduleDecision d;
  d.clock = clock;
  for (WorkerId p = 0; p < num_workers; ++p) {
    const auto& block = block_map[p];
    std::vector<std::uint64_t> idxs;
    if (!block.empty()) {
      idxs.push_back(block[std::size_t(clock) % block.size()]);
      ++d.degree;
    }
    d.assignments.emplace_back(p, std::move(idxs));
  }
  return d;
}

struct SrrpOptions {
  std::size_t proposal_count = 0;  // Q, must exceed the worker count
  double theta = 1.0;              // co-schedule i,j iff |x_i . x_j| <= theta
};

// Dependency-checked random proposal: draw Q > P candidates (uniformly or
// from the priority weights), then greedily keep candidates in draw order
// while they stay pairwise compatible under theta. Degree may come out
// below P when too few candidates pass; that just lowers the parallelism
// for the clock.
inline ScheduleDecision schedule_srrp(ClockT clock, WorkerId num_workers,
                                      const SrrpOptions& opt,
                                      const CorrelationIndex& corr,
                                      const PriorityState* prio,
                                      std::uint64_t seed) {
  if (opt.proposal_count <= num_workers)
    throw UsageError("proposal count Q must exceed worker count P");
  if (opt.theta <= 0.0 || opt.theta > 1.0)
    throw UsageError("theta must lie in (0, 1]");
  if (corr.dim() < opt.proposal_count)
    throw UsageError("model dimension smaller than proposal count");
  if (prio && prio->weights.size() != corr.dim())
    throw UsageError("priority state dimension mismatch");

  Rng rng(seed);
  std::vector<std::uint64_t> candidates;
  if (prio) {
    candidates =
        weighted_draw_without_replacement(prio->weights, opt.proposal_count, rng);
  } else {
    std::vector<double> uniform(corr.dim(), 1.0);
    candidates =
        weighted_draw_without_replacement(uniform, opt.proposal_count, rng);
  }

  std::vector<std::uint64_t> retained;
  for (std::uint64_t c : candidates) {
    if (retained.size() >= num_workers) break;
    bool compatible = true;
    for (std::uint64_t r : retained) {
      if (std::abs(corr.correlation(c, r)) > opt.theta) {
        compatible = false;
        break;
      }
    }
    if (compatible) retained.push_back(c);
  }

  ScheduleDecision d;
  d.clock = clock;
  d.degree = std::uint32_t(retained.size());
  for (WorkerId p = 0; p < num_workers; ++p) {
    std::vector<std::uint64_t> idxs;
    if (p < retained.size()) idxs.push_back(retained[p]);
    d.assignments.emplace_back(p, std::move(idxs));
  }
  return d;
}

// One decision covering every index, split across workers by contiguous
// blocks. Used to touch all parameters once before switching to
// dependency-checked scheduling (safe from a zero model state, where no
// coupling terms exist yet).
inline ScheduleDecision schedule_full_sweep(ClockT clock, WorkerId num_workers,
                                            std::size_t dim) {
  ScheduleDecision d;
  d.clock = clock;
  d.degree = std::uint32_t(std::min<std::size_t>(dim, num_workers));
  std::size_t base = dim / num_workers;
  std::size_t extra = dim % num_workers;
  std::uint64_t next = 0;
  for (WorkerId p = 0; p < num_workers; ++p) {
    std::size_t take = base + (p < extra ? 1 : 0);
    std::vector<std::uint64_t> idxs(take);
    std::iota(idxs.begin(), idxs.end(), next);
    next += take;
    d.assignments.emplace_back(p, std::move(idxs));
  }
  return d;
}

// Parallelization-error diagnostic eps = d * (E[P^2]/E[P] - 1) * (rho - 1) / N.
// Expected descent per step requires eps < 1; the caller should warn when
// the diagnostic reaches that threshold.
inline double compute_epsilon(std::size_t dim, double expected_p,
                              double expected_p2, double rho, double n_pairs) {
  if (expected_p < 1.0) throw UsageError("expected degree must be >= 1");
  if (rho < 1.0) throw UsageError("spectral radius must be >= 1");
  if (n_pairs < 1.0) throw UsageError("pair count must be >= 1");
  return double(dim) * (expected_p2 / expected_p - 1.0) * (rho - 1.0) / n_pairs;
}

struct SpectralOptions {
  std::size_t dim_cap = 2000;
  double tolerance = 1e-8;
  std::size_t max_iterations = 100000;
  std::uint64_t seed = 12345;
};

struct SpectralError : std::runtime_error {
  double last_iterate;
  SpectralError(const std::string& what, double last)
      : std::runtime_error(what), last_iterate(last) {}
};

// Spectral radius of the masked correlation matrix A (A_ii = 1; A_ij equals
// the correlation when it passes the theta check, else 0), estimated by
// power iteration. A is symmetric, so the dominant eigenvalue in magnitude
// is the spectral radius.
inline double masked_spectral_radius(const CorrelationIndex& corr, double theta,
                                     const SpectralOptions& opt = {}) {
  std::size_t d = corr.dim();
  if (d > opt.dim_cap)
    throw UsageError("dimension exceeds spectral diagnostic cap");
  std::vector<double> a(d * d, 0.0);
  for (std::size_t i = 0; i < d; ++i) {
    a[i * d + i] = 1.0;
    for (std::size_t j = i + 1; j < d; ++j) {
      double c = corr.correlation(i, j);
      if (std::abs(c) <= theta) {
        a[i * d + j] = c;
        a[j * d + i] = c;
      }
    }
  }

  Rng rng(opt.seed);
  std::vector<double> v(d), av(d);
  for (double& x : v) x = rng.uniform01() + 0.1;
  double norm = std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
  for (double& x : v) x /= norm;

  double lambda = 0.0;
  for (std::size_t it = 0; it < opt.max_iterations; ++it) {
    for (std::size_t i = 0; i < d; ++i) {
      double s = 0.0;
      const double* row = &a[i * d];
      for (std::size_t j = 0; j < d; ++j) s += row[j] * v[j];
      av[i] = s;
    }
    double next = std::inner_product(v.begin(), v.end(), av.begin(), 0.0);
    double av_norm =
        std::sqrt(std::inner_product(av.begin(), av.end(), av.begin(), 0.0));
    if (av_norm == 0.0) return 0.0;
    for (std::size_t i = 0; i < d; ++i) v[i] = av[i] / av_norm;
    if (it > 0 && std::abs(next - lambda) <= opt.tolerance * std::max(1.0, std::abs(next)))
      return std::abs(next);
    lambda = next;
  }
  throw SpectralError("power iteration did not converge", std::abs(lambda));
}

// Number of index pairs passing the dependency check. Exact when the
// dimension is small; estimated from sampled pairs otherwise.
inline double estimate_passing_pairs(const CorrelationIndex& corr, double theta,
                                     std::uint64_t seed,
                                     std::size_t exact_dim_limit = 500,
                                     std::size_t sample_pairs = 10000) {
  std::size_t d = corr.dim();
  if (d < 2) return 0.0;
  double total = 0.5 * double(d) * double(d - 1);
  if (d <= exact_dim_limit) {
    std::uint64_t pass = 0;
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = i + 1; j < d; ++j)
        if (std::abs(corr.correlation(i, j)) <= theta) ++pass;
    return double(pass);
  }
  Rng rng(seed);
  std::uint64_t pass = 0;
  for (std::size_t k = 0; k < sample_pairs; ++k) {
    std::size_t i = std::size_t(rng.index(d));
    std::size_t j = std::size_t(rng.index(d - 1));
    if (j >= i) ++j;
    if (std::abs(corr.correlation(i, j)) <= theta) ++pass;
  }
  return total * double(pass) / double(sample_pairs);
}

}  // namespace skiff
