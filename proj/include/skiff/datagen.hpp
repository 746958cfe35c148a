#pragma once

#include <cmath>
#include <vector>

#include "skiff/dml.hpp"
#include "skiff/lasso.hpp"

namespace skiff {

// Synthetic lasso generator with a planted sparse truth and optional
// block-correlated design: columns within one block share a latent factor,
// giving within-block correlation ~ block_corr (exactly duplicated columns
// at block_corr = 1).
struct SyntheticLassoSpec {
  std::size_t n = 1000;
  std::size_t d = 500;
  std::size_t sparsity = 25;
  std::size_t block_size = 1;
  double block_corr = 0.0;
  double noise_sd = 0.1;
  double lambda = 0.05;
  // Planted coefficient magnitudes are drawn from [magnitude_min,
  // magnitude_max] with random signs; equal bounds plant a constant
  // magnitude.
  double magnitude_min = 0.5;
  double magnitude_max = 2.0;
  std::uint64_t seed = 1;
  // Center y and scale it to unit variance (the standardized-regression
  // convention; leaves exact-fit instances alone when disabled).
  bool standardize_y = false;
  // Plant the nonzeros contiguously from index 0, concentrating them in
  // the leading correlated blocks (a long mutually-coupled critical path)
  // instead of scattering them.
  bool plant_clustered = false;
};

struct GeneratedLasso {
  LassoProblem problem;
  std::vector<double> beta_true;  // effective truth after column scaling
};

inline GeneratedLasso gen_lasso(const SyntheticLassoSpec& spec) {
  if (spec.d == 0 || spec.n == 0) throw UsageError("empty problem spec");
  if (spec.sparsity > spec.d) throw UsageError("sparsity exceeds dimension");
  if (spec.block_corr < 0.0 || spec.block_corr > 1.0)
    throw UsageError("block correlation must lie in [0, 1]");
  Rng rng(mix_seed(spec.seed, 0x67656eULL));

  std::size_t block = std::max<std::size_t>(1, spec.block_size);
  std::vector<std::vector<double>> cols(spec.d, std::vector<double>(spec.n));
  double shared_w = std::sqrt(spec.block_corr);
  double own_w = std::sqrt(1.0 - spec.block_corr);
  std::vector<double> factor(spec.n);
  for (std::size_t j = 0; j < spec.d; ++j) {
    if (j % block == 0)
      for (double& v : factor) v = rng.gaussian();
    for (std::size_t i = 0; i < spec.n; ++i)
      cols[j][i] = shared_w * factor[i] + own_w * rng.gaussian();
  }

  // Planted truth on raw columns; scaling to unit norm rescales it.
  std::vector<double> beta_raw(spec.d, 0.0);
  std::size_t placed = 0;
  while (placed < spec.sparsity) {
    std::size_t j = spec.plant_clustered ? placed : std::size_t(rng.index(spec.d));
    if (beta_raw[j] != 0.0) continue;
    double magnitude =
        spec.magnitude_min +
        (spec.magnitude_max - spec.magnitude_min) * rng.uniform01();
    beta_raw[j] = rng.uniform01() < 0.5 ? -magnitude : magnitude;
    ++placed;
  }

  std::vector<double> y(spec.n, 0.0);
  for (std::size_t j = 0; j < spec.d; ++j) {
    if (beta_raw[j] == 0.0) continue;
    for (std::size_t i = 0; i < spec.n; ++i) y[i] += beta_raw[j] * cols[j][i];
  }
  if (spec.noise_sd > 0.0)
    for (double& v : y) v += spec.noise_sd * rng.gaussian();

  double y_scale = 1.0;
  if (spec.standardize_y) {
    double mean = 0.0;
    for (double v : y) mean += v;
    mean /= double(spec.n);
    double var = 0.0;
    for (double v : y) var += (v - mean) * (v - mean);
    y_scale = spec.n > 1 ? std::sqrt(var / double(spec.n - 1)) : 1.0;
    if (y_scale <= 0.0) y_scale = 1.0;
    for (double& v : y) v = (v - mean) / y_scale;
  }

  std::vector<double> beta_true(spec.d, 0.0);
  for (std::size_t j = 0; j < spec.d; ++j) {
    double norm2 = 0.0;
    for (double v : cols[j]) norm2 += v * v;
    beta_true[j] = beta_raw[j] * std::sqrt(norm2) / y_scale;
  }

  GeneratedLasso out{LassoProblem::create(std::move(cols), std::move(y),
                                          spec.lambda),
                     std::move(beta_true)};
  return out;
}

// Two-cluster metric learning data: similar pairs sampled within a cluster,
// dissimilar pairs across clusters, Gaussian noise around the centers.
struct SyntheticDmlSpec {
  std::size_t dim = 32;
  std::size_t rank = 16;
  std::size_t pairs = 5000;  // total; half similar, half dissimilar
  double separation = 3.0;
  double noise_sd = 1.0;
  double lambda = 1.0;
  double step0 = 0.1;
  std::size_t minibatch = 64;
  std::uint64_t seed = 1;
};

inline DmlProblem gen_dml(const SyntheticDmlSpec& spec) {
  if (spec.dim == 0 || spec.rank == 0) throw UsageError("empty problem spec");
  Rng rng(mix_seed(spec.seed, 0x646d6c67656eULL));
  std::vector<double> center(spec.dim);
  double norm2 = 0.0;
  for (double& v : center) {
    v = rng.gaussian();
    norm2 += v * v;
  }
  double scale = spec.separation / std::sqrt(norm2);
  for (double& v : center) v *= scale;

  auto sample = [&](bool second_cluster) {
    std::vector<double> x(spec.dim);
    for (std::size_t k = 0; k < spec.dim; ++k) {
      x[k] = spec.noise_sd * rng.gaussian();
      if (second_cluster) x[k] += center[k];
    }
    return x;
  };

  DmlProblem p;
  p.dim = spec.dim;
  p.rank = spec.rank;
  p.lambda = spec.lambda;
  p.step0 = spec.step0;
  p.minibatch = spec.minibatch;
  std::size_t half = std::max<std::size_t>(1, spec.pairs / 2);
  for (std::size_t i = 0; i < half; ++i) {
    bool cluster = rng.uniform01() < 0.5;
    p.similar.emplace_back(sample(cluster), sample(cluster));
    p.dissimilar.emplace_back(sample(false), sample(true));
  }
  return p;
}

}  // namespace skiff
