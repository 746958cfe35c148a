#pragma once

#include <cmath>
#include <memory>
#include <vector>

#include "skiff/runtime.hpp"

namespace skiff {

// Row-major dense matrix, small enough to pass around by value.
struct Mat {
  std::size_t rows = 0, cols = 0;
  std::vector<double> data;

  Mat() = default;
  Mat(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  static Mat identity(std::size_t r, std::size_t c) {
    Mat m(r, c);
    for (std::size_t i = 0; i < r && i < c; ++i) m.at(i, i) = 1.0;
    return m;
  }
};

using DmlPair = std::pair<std::vector<double>, std::vector<double>>;

// Distance metric learning instance: learn L (rank x dim) minimizing
//   sum_{(x,y) in S} ||L(x-y)||^2
//   + lambda * sum_{(a,b) in D} max(0, 1 - ||L(a-b)||^2).
struct DmlProblem {
  std::size_t dim = 0;
  std::size_t rank = 0;
  std::vector<DmlPair> similar;
  std::vector<DmlPair> dissimilar;
  double lambda = 1.0;
  double step0 = 0.1;        // eta_t = step0 / sqrt(t)
  std::size_t minibatch = 16;  // C

  void validate() const {
    if (dim == 0 || rank == 0) throw UsageError("dml needs dim and rank");
    if (lambda <= 0.0) throw UsageError("lambda must be positive");
    if (similar.empty() || dissimilar.empty())
      throw UsageError("dml needs similar and dissimilar pairs");
    for (const auto& [x, y] : similar)
      if (x.size() != dim || y.size() != dim)
        throw UsageError("similar pair dimension mismatch");
    for (const auto& [a, b] : dissimilar)
      if (a.size() != dim || b.size() != dim)
        throw UsageError("dissimilar pair dimension mismatch");
  }
};

inline double dml_step_size(double step0, ClockT clock) {
  return step0 / std::sqrt(double(clock + 1));
}

namespace detail {

// g += 2 L u u^T for u = x - y.
inline void add_similar_term(Mat& g, const Mat& L, const std::vector<double>& x,
                             const std::vector<double>& y) {
  if (x.size() != L.cols || y.size() != L.cols)
    throw UsageError("pair dimension mismatch");
  std::vector<double> u(L.cols);
  for (std::size_t c = 0; c < L.cols; ++c) u[c] = x[c] - y[c];
  for (std::size_t r = 0; r < L.rows; ++r) {
    double v = 0.0;
    for (std::size_t c = 0; c < L.cols; ++c) v += L.at(r, c) * u[c];
    double s = 2.0 * v;
    for (std::size_t c = 0; c < L.cols; ++c) g.at(r, c) += s * u[c];
  }
}

// g -= lambda * 2 L u u^T when the margin is violated (||L u||^2 < 1; the
// exact-kink case contributes nothing). u = a - b.
inline void add_dissimilar_term(Mat& g, const Mat& L,
                                const std::vector<double>& a,
                                const std::vector<double>& b, double lambda) {
  if (a.size() != L.cols || b.size() != L.cols)
    throw UsageError("pair dimension mismatch");
  std::vector<double> u(L.cols);
  for (std::size_t c = 0; c < L.cols; ++c) u[c] = a[c] - b[c];
  std::vector<double> v(L.rows);
  double norm2 = 0.0;
  for (std::size_t r = 0; r < L.rows; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < L.cols; ++c) s += L.at(r, c) * u[c];
    v[r] = s;
    norm2 += s * s;
  }
  if (norm2 >= 1.0) return;
  for (std::size_t r = 0; r < L.rows; ++r) {
    double s = lambda * 2.0 * v[r];
    for (std::size_t c = 0; c < L.cols; ++c) g.at(r, c) -= s * u[c];
  }
}

}  // namespace detail

// Batch ascent direction of the hinge-relaxed objective; SGD descends with
// -step * gradient / C.
inline Mat dml_gradient(const Mat& L, const std::vector<DmlPair>& batch_similar,
                        const std::vector<DmlPair>& batch_dissimilar,
                        double lambda) {
  if (batch_similar.empty() && batch_dissimilar.empty())
    throw UsageError("empty gradient batch");
  Mat g(L.rows, L.cols);
  for (const auto& [x, y] : batch_similar) detail::add_similar_term(g, L, x, y);
  for (const auto& [a, b] : batch_dissimilar)
    detail::add_dissimilar_term(g, L, a, b, lambda);
  return g;
}

inline double dml_objective(const Mat& L, const DmlProblem& p) {
  double obj = 0.0;
  std::vector<double> u(p.dim);
  for (const auto& [x, y] : p.similar) {
    for (std::size_t c = 0; c < p.dim; ++c) u[c] = x[c] - y[c];
    for (std::size_t r = 0; r < p.rank; ++r) {
      double v = 0.0;
      for (std::size_t c = 0; c < p.dim; ++c) v += L.at(r, c) * u[c];
      obj += v * v;
    }
  }
  for (const auto& [a, b] : p.dissimilar) {
    for (std::size_t c = 0; c < p.dim; ++c) u[c] = a[c] - b[c];
    double norm2 = 0.0;
    for (std::size_t r = 0; r < p.rank; ++r) {
      double v = 0.0;
      for (std::size_t c = 0; c < p.dim; ++c) v += L.at(r, c) * u[c];
      norm2 += v * v;
    }
    double hinge = 1.0 - norm2;
    if (hinge > 0.0) obj += p.lambda * hinge;
  }
  return obj;
}

struct DmlShard {
  std::size_t sim_begin = 0, sim_end = 0;
  std::size_t dis_begin = 0, dis_end = 0;

  static DmlShard of(const DmlProblem& p, WorkerId num_workers, WorkerId w) {
    auto split = [&](std::size_t n) {
      std::size_t base = n / num_workers;
      std::size_t extra = n % num_workers;
      std::size_t begin = std::size_t(w) * base + std::min<std::size_t>(w, extra);
      return std::make_pair(begin, begin + base + (w < extra ? 1 : 0));
    };
    DmlShard s;
    std::tie(s.sim_begin, s.sim_end) = split(p.similar.size());
    std::tie(s.dis_begin, s.dis_end) = split(p.dissimilar.size());
    if (s.sim_begin == s.sim_end || s.dis_begin == s.dis_end)
      throw UsageError("empty data shard for worker " + std::to_string(w));
    return s;
  }
};

// One minibatch: C interleaved (similar, dissimilar) draws from the shard,
// gradient terms accumulated in draw order.
inline Mat dml_minibatch_gradient(const DmlProblem& p, const Mat& L,
                                  const DmlShard& shard, std::size_t batch,
                                  Rng& stream) {
  Mat g(L.rows, L.cols);
  for (std::size_t c = 0; c < batch; ++c) {
    std::size_t si =
        shard.sim_begin + std::size_t(stream.index(shard.sim_end - shard.sim_begin));
    const auto& [x, y] = p.similar[si];
    detail::add_similar_term(g, L, x, y);
    std::size_t di =
        shard.dis_begin + std::size_t(stream.index(shard.dis_end - shard.dis_begin));
    const auto& [a, b] = p.dissimilar[di];
    detail::add_dissimilar_term(g, L, a, b, p.lambda);
  }
  return g;
}

struct DmlAppOptions {
  StopRule stop{};
};

// Data-parallel DML: empty schedule, no pull; every worker reads L under
// the staleness bound, samples a minibatch from its shard, and writes the
// scaled gradient back through the additive channel.
inline AppContract make_dml_app(std::shared_ptr<const DmlProblem> prob,
                                const DmlAppOptions& opt, WorkerId num_workers,
                                std::uint64_t seed) {
  prob->validate();
  const std::size_t rank = prob->rank;
  const std::size_t dim = prob->dim;

  AppContract app;
  Mat init = Mat::identity(rank, dim);
  app.tables = {TableSpec{"L", RowId(rank), ColId(dim), init.data}};
  app.stop = opt.stop;
  app.scheduler.kind = ScheduleKind::kEmpty;
  app.scheduler.dim = dim * rank;

  struct WorkerState {
    Rng stream;
    DmlShard shard;
  };
  auto states =
      std::make_shared<std::vector<std::unique_ptr<WorkerState>>>(num_workers);

  app.push = [prob, states, num_workers, seed, rank, dim](WorkerCtx& ctx) {
    auto& slot = (*states)[ctx.worker];
    if (!slot)
      slot = std::unique_ptr<WorkerState>(
          new WorkerState{Rng(mix_seed(seed, 0x646d6cULL, ctx.worker)),
                          DmlShard::of(*prob, num_workers, ctx.worker)});
    Mat L(rank, dim);
    for (RowId r = 0; r < rank; ++r) {
      std::vector<double> row = ctx.ps->get("L", r);
      for (std::size_t c = 0; c < dim; ++c) L.at(r, c) = row[c];
    }
    Mat g = dml_minibatch_gradient(*prob, L, slot->shard, prob->minibatch,
                                   slot->stream);
    double scale = -dml_step_size(prob->step0, ctx.clock) / double(prob->minibatch);
    for (std::size_t r = 0; r < rank; ++r)
      for (std::size_t c = 0; c < dim; ++c)
        ctx.ps->inc("L", RowId(r), ColId(c), scale * g.at(r, c));
    return PartialPayload{};
  };

  app.objective = [prob, rank, dim](const ModelSnapshot& snap) {
    Mat L(rank, dim);
    for (RowId r = 0; r < rank; ++r) {
      const auto& row = snap.row("L", r);
      for (std::size_t c = 0; c < dim; ++c) L.at(r, c) = row[c];
    }
    return dml_objective(L, *prob);
  };

  return app;
}

}  // namespace skiff
