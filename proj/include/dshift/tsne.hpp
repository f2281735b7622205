#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dshift/embedding.hpp"
#include "dshift/parallel.hpp"

namespace dshift {

struct TsneConfig {
  double perplexity = 30.0;
  std::size_t iterations = 1000;
  double learning_rate = 200.0;
  double initial_momentum = 0.5;
  double final_momentum = 0.8;
  std::size_t momentum_switch = 250;  // iteration at which final_momentum applies
  double early_exaggeration = 12.0;
  std::size_t exaggeration_iterations = 250;
  double init_sigma = 1e-4;
  double min_gain = 0.01;
  std::size_t point_cap = 5000;  // larger inputs are subsampled with `seed`
  std::uint64_t seed = 0;
};

struct PerplexityResult {
  double sigma = 0;
  double beta = 0;        // 1 / (2 sigma^2)
  double perplexity = 0;  // 2^H of the calibrated conditional distribution
  std::size_t iterations = 0;
  bool converged = false;
};

/// Finds the Gaussian bandwidth whose conditional distribution over the
/// given squared distances has the target perplexity (relative tolerance
/// `tol`, at most `max_iterations` bisection steps on log beta). Throws
/// DegenerateDistances when every distance is zero and
/// InfeasiblePerplexity when target >= n (= distances + 1) or target <= 1.
/// Returns the best bandwidth found with converged = false otherwise.
PerplexityResult perplexity_search(std::span<const double> sq_distances, double target,
                                   double tol = 1e-5, std::size_t max_iterations = 64);

/// Conditional probabilities p_{j|i} for a given beta (row i of the input).
std::vector<double> conditional_row(std::span<const double> sq_distances, double beta);

/// Dense symmetric joint distribution P (n x n, row-major, zero diagonal).
struct JointProbabilities {
  std::size_t n = 0;
  std::vector<double> p;
  std::size_t unconverged_rows = 0;

  double at(std::size_t i, std::size_t j) const noexcept { return p[i * n + j]; }
};

/// P = (P_cond + P_cond^T) / (2n) from squared Euclidean input distances.
JointProbabilities joint_probabilities(const EmbeddingMatrix& emb, double perplexity,
                                       Exec exec = Exec::Parallel);

struct KlGradient {
  double kl = 0;
  std::vector<double> grad;  // n x 2, row-major
};

/// KL(P || Q) with the Student-t (1 d.o.f.) output kernel and its exact
/// gradient 4 sum_j (p_ij - q_ij)(y_i - y_j) / (1 + |y_i - y_j|^2).
/// `exaggeration` scales P in the gradient only; the reported KL always
/// uses the unscaled P.
KlGradient kl_and_gradient(const JointProbabilities& P, std::span<const double> y,
                           Exec exec = Exec::Parallel, double exaggeration = 1.0);

/// Gaussian initialization with standard deviation cfg.init_sigma keyed by cfg.seed.
std::vector<double> initial_embedding(std::size_t n, const TsneConfig& cfg);

struct Projection {
  std::vector<std::string> ids;
  std::vector<double> coords;  // n x 2, row-major
  double final_kl = 0;
  std::string initialization;
  std::size_t input_points = 0;  // before the point cap
};

/// Exact O(n^2) t-SNE with momentum and per-coordinate adaptive gains.
/// Throws InfeasiblePerplexity (perplexity >= n), InvalidArgument (n < 4)
/// and NonFiniteValue if the optimisation diverges.
Projection tsne(const EmbeddingMatrix& emb, const TsneConfig& cfg, Exec exec = Exec::Parallel);

}  // namespace dshift
