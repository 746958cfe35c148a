#pragma once

#include <cmath>
#include <memory>
#include <vector>

#include "skiff/runtime.hpp"
#include "skiff/transport.hpp"

namespace skiff {

// Standardized lasso instance: unit-norm feature columns, centered response,
// no intercept. Objective: 0.5 * ||y - X beta||^2 + lambda * sum |beta_j|.
struct LassoProblem {
  std::vector<std::vector<double>> columns;  // d columns, each of length n
  std::vector<double> y;
  double lambda = 0.0;
  // Features duplicated with opposite sign ([X, -X], nonnegative
  // coefficients); used by the theory-validation paths.
  bool duplicated = false;

  std::size_t n() const { return y.size(); }
  std::size_t dim() const { return columns.size(); }

  static LassoProblem create(std::vector<std::vector<double>> columns,
                             std::vector<double> y, double lambda) {
    if (columns.empty()) throw UsageError("lasso needs at least one feature");
    if (lambda < 0.0) throw UsageError("lambda must be non-negative");
    LassoProblem p;
    p.y = std::move(y);
    p.lambda = lambda;
    for (auto& col : columns) {
      if (col.size() != p.y.size())
        throw UsageError("feature column length does not match y");
      double norm2 = 0.0;
      for (double v : col) norm2 += v * v;
      if (norm2 <= 0.0) throw UsageError("zero feature column");
      double inv = 1.0 / std::sqrt(norm2);
      for (double& v : col) v *= inv;
    }
    p.columns = std::move(columns);
    return p;
  }
};

// [X, -X] with nonnegative coefficients.
inline LassoProblem duplicate_features(const LassoProblem& p) {
  LassoProblem out = p;
  out.duplicated = true;
  for (std::size_t j = 0; j < p.dim(); ++j) {
    std::vector<double> neg = p.columns[j];
    for (double& v : neg) v = -v;
    out.columns.push_back(std::move(neg));
  }
  return out;
}

// sign(v) * max(|v| - lambda, 0): the l1 proximal step.
inline double soft_threshold(double v, double lambda) {
  if (lambda < 0.0) throw UsageError("lambda must be non-negative");
  if (v > lambda) return v - lambda;
  if (v < -lambda) return v + lambda;
  return 0.0;
}

// One-sided variant for the duplicated (nonnegative) formulation.
inline double positive_threshold(double v, double lambda) {
  return v > lambda ? v - lambda : 0.0;
}

// Aggregation step of the pull: sum worker partials in worker order, then
// shrink.
inline double sum_threshold(const std::vector<double>& zs, double lambda,
                            bool duplicated = false) {
  double z = 0.0;
  for (double v : zs) z += v;
  return duplicated ? positive_threshold(z, lambda) : soft_threshold(z, lambda);
}

// Partial coordinate statistics over a row shard: for each requested j,
//   z_p[j] = sum_{i in shard} x_ij * (y_i - sum_k x_ik beta_k) + beta_j * q_j,
// where q_j is the shard part of x_j . x_j. Summing z_p over all shards
// yields x_j.y - sum_{k != j} (x_j . x_k) beta_k, the coordinate update
// argument.
inline std::vector<double> lasso_partial(const LassoProblem& p,
                                         std::size_t row_begin,
                                         std::size_t row_end,
                                         const std::vector<double>& beta,
                                         const std::vector<std::uint64_t>& indices) {
  if (row_end > p.n() || row_begin > row_end)
    throw UsageError("row shard out of range");
  if (beta.size() != p.dim()) throw UsageError("beta size mismatch");
  std::vector<double> residual(p.y.begin() + row_begin, p.y.begin() + row_end);
  for (std::size_t k = 0; k < p.dim(); ++k) {
    double b = beta[k];
    if (b == 0.0) continue;
    const auto& col = p.columns[k];
    for (std::size_t i = row_begin; i < row_end; ++i)
      residual[i - row_begin] -= b * col[i];
  }
  std::vector<double> out;
  out.reserve(indices.size());
  for (std::uint64_t j : indices) {
    if (j >= p.dim()) throw UsageError("feature index out of range");
    const auto& col = p.columns[j];
    double dot = 0.0;
    double q = 0.0;
    for (std::size_t i = row_begin; i < row_end; ++i) {
      dot += col[i] * residual[i - row_begin];
      q += col[i] * col[i];
    }
    out.push_back(dot + beta[j] * q);
  }
  return out;
}

inline double lasso_objective(const LassoProblem& p,
                              const std::vector<double>& beta) {
  if (beta.size() != p.dim()) throw UsageError("beta size mismatch");
  std::vector<double> residual = p.y;
  for (std::size_t k = 0; k < p.dim(); ++k) {
    double b = beta[k];
    if (b == 0.0) continue;
    const auto& col = p.columns[k];
    for (std::size_t i = 0; i < p.n(); ++i) residual[i] -= b * col[i];
  }
  double loss = 0.0;
  for (double r : residual) loss += r * r;
  double penalty = 0.0;
  for (double b : beta) penalty += std::abs(b);
  return 0.5 * loss + p.lambda * penalty;
}

// Contiguous row range of shard p out of P.
inline std::pair<std::size_t, std::size_t> shard_rows(std::size_t n,
                                                      WorkerId num_workers,
                                                      WorkerId p) {
  std::size_t base = n / num_workers;
  std::size_t extra = n % num_workers;
  std::size_t begin = std::size_t(p) * base + std::min<std::size_t>(p, extra);
  std::size_t len = base + (p < extra ? 1 : 0);
  return {begin, begin + len};
}

// Chunked layout of the coefficient vector in the parameter server.
struct LassoLayout {
  std::size_t dim = 0;
  ColId width = 0;

  explicit LassoLayout(std::size_t d)
      : dim(d), width(ColId(std::min<std::size_t>(d, 64))) {}

  RowId num_rows() const { return RowId((dim + width - 1) / width); }
  RowId row_of(std::uint64_t j) const { return RowId(j / width); }
  ColId col_of(std::uint64_t j) const { return ColId(j % width); }

  TableSpec table_spec() const {
    return TableSpec{"beta", num_rows(), width, {}};
  }

  std::vector<double> read_all(PsWorkerHandle& ps) const {
    std::vector<double> beta;
    beta.reserve(dim);
    for (RowId r = 0; r < num_rows(); ++r) {
      std::vector<double> row = ps.get("beta", r);
      for (double v : row) {
        if (beta.size() == dim) break;
        beta.push_back(v);
      }
    }
    return beta;
  }
};

// Per-worker solver state: a local snapshot of beta and the shard residual,
// updated incrementally as coefficients change between clocks.
class LassoWorkerState {
 public:
  LassoWorkerState(std::shared_ptr<const LassoProblem> prob,
                   std::size_t row_begin, std::size_t row_end)
      : prob_(std::move(prob)),
        row_begin_(row_begin),
        row_end_(row_end),
        beta_(prob_->dim(), 0.0),
        residual_(prob_->y.begin() + row_begin, prob_->y.begin() + row_end),
        col_sq_(prob_->dim(), 0.0) {
    for (std::size_t j = 0; j < prob_->dim(); ++j) {
      const auto& col = prob_->columns[j];
      double q = 0.0;
      for (std::size_t i = row_begin_; i < row_end_; ++i) q += col[i] * col[i];
      col_sq_[j] = q;
    }
  }

  // Folds a fresh beta snapshot into the residual (sparse delta pass).
  void refresh(const std::vector<double>& fresh) {
    for (std::size_t j = 0; j < fresh.size(); ++j) {
      double delta = fresh[j] - beta_[j];
      if (delta == 0.0) continue;
      const auto& col = prob_->columns[j];
      for (std::size_t i = row_begin_; i < row_end_; ++i)
        residual_[i - row_begin_] -= delta * col[i];
      beta_[j] = fresh[j];
    }
  }

  std::vector<double> partials(const std::vector<std::uint64_t>& indices) const {
    std::vector<double> out;
    out.reserve(indices.size());
    for (std::uint64_t j : indices) {
      const auto& col = prob_->columns[j];
      double dot = 0.0;
      for (std::size_t i = row_begin_; i < row_end_; ++i)
        dot += col[i] * residual_[i - row_begin_];
      out.push_back(dot + beta_[j] * col_sq_[j]);
    }
    return out;
  }

  const std::vector<double>& beta() const { return beta_; }

 private:
  std::shared_ptr<const LassoProblem> prob_;
  std::size_t row_begin_, row_end_;
  std::vector<double> beta_;
  std::vector<double> residual_;
  std::vector<double> col_sq_;
};

struct LassoAppOptions {
  ScheduleKind kind = ScheduleKind::kSrrp;
  SrrpOptions srrp{};
  double eta = 1e-3;
  PriorityForm priority_form = PriorityForm::kChange;
  bool bootstrap_full_sweep = false;
  std::vector<std::vector<std::uint64_t>> block_map;  // kFixed only
  StopRule stop{};
};

namespace detail {

inline PartialPayload encode_lasso_partial(const std::vector<double>& zs) {
  wire::ByteWriter w;
  w.u32(std::uint32_t(zs.size()));
  for (double z : zs) w.f64(z);
  return w.take();
}

inline std::vector<double> decode_lasso_partial(const PartialPayload& p,
                                                std::size_t expect) {
  wire::ByteReader r(p.data(), p.size());
  std::uint32_t n = r.u32();
  if (n != expect) throw RunError("lasso partial size mismatch");
  std::vector<double> zs(n);
  for (auto& z : zs) z = r.f64();
  return zs;
}

}  // namespace detail

// Scheduled model-parallel lasso: push computes shard partials for the
// scheduled coordinates, pull sums them, shrinks, and overwrites beta.
inline AppContract make_lasso_app(std::shared_ptr<const LassoProblem> prob,
                                  const LassoAppOptions& opt,
                                  WorkerId num_workers) {
  const std::size_t d = prob->dim();
  auto layout = std::make_shared<LassoLayout>(d);

  AppContract app;
  app.tables = {layout->table_spec()};
  app.stop = opt.stop;

  app.scheduler.kind = opt.kind;
  app.scheduler.dim = d;
  app.scheduler.eta = opt.eta;
  app.scheduler.srrp = opt.srrp;
  app.scheduler.bootstrap_full_sweep = opt.bootstrap_full_sweep;
  if (opt.kind == ScheduleKind::kFixed) {
    if (!opt.block_map.empty()) {
      app.scheduler.block_map = opt.block_map;
    } else {
      app.scheduler.block_map.resize(num_workers);
      for (std::uint64_t j = 0; j < d; ++j)
        app.scheduler.block_map[j % num_workers].push_back(j);
    }
  }
  if (opt.kind == ScheduleKind::kSrrp || opt.kind == ScheduleKind::kPriority)
    app.scheduler.corr = std::make_shared<CorrelationIndex>(prob->columns);

  auto states = std::make_shared<
      std::vector<std::unique_ptr<LassoWorkerState>>>(num_workers);

  app.push = [prob, layout, states, num_workers](WorkerCtx& ctx) {
    auto& slot = (*states)[ctx.worker];
    if (!slot) {
      auto [begin, end] = shard_rows(prob->n(), num_workers, ctx.worker);
      slot = std::make_unique<LassoWorkerState>(prob, begin, end);
    }
    slot->refresh(layout->read_all(*ctx.ps));
    std::vector<std::uint64_t> idxs = ctx.decision->all_indices();
    return detail::encode_lasso_partial(slot->partials(idxs));
  };

  auto agg_beta = std::make_shared<std::vector<double>>(d, 0.0);
  const double lambda = prob->lambda;
  const bool duplicated = prob->duplicated;
  const PriorityForm form = opt.priority_form;

  app.pull = [layout, agg_beta, lambda, duplicated, form](PullCtx& ctx) {
    std::vector<std::uint64_t> idxs = ctx.decision->all_indices();
    std::vector<std::vector<double>> zs;
    zs.reserve(ctx.partials->size());
    for (const auto& payload : *ctx.partials)
      zs.push_back(detail::decode_lasso_partial(payload, idxs.size()));
    for (std::size_t a = 0; a < idxs.size(); ++a) {
      std::vector<double> z_over_workers;
      z_over_workers.reserve(zs.size());
      for (const auto& zp : zs) z_over_workers.push_back(zp[a]);
      double newval = sum_threshold(z_over_workers, lambda, duplicated);
      std::uint64_t j = idxs[a];
      double oldval = (*agg_beta)[j];
      ctx.ps->put(ctx.clock, "beta", layout->row_of(j), layout->col_of(j),
                  newval);
      (*agg_beta)[j] = newval;
      if (ctx.priority) {
        double w = form == PriorityForm::kChange ? newval - oldval : newval;
        ctx.priority->update(j, w);
      }
    }
  };

  app.objective = [prob, layout](const ModelSnapshot& snap) {
    return lasso_objective(*prob, snap.flatten("beta", layout->dim));
  };

  return app;
}

}  // namespace skiff
