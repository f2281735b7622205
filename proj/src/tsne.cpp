#include "dshift/tsne.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <spdlog/spdlog.h>

#include "dshift/error.hpp"
#include "dshift/rng.hpp"

namespace dshift {

std::vector<double> conditional_row(std::span<const double> sq_distances, double beta) {
  const double dmin = *std::min_element(sq_distances.begin(), sq_distances.end());
  std::vector<double> p(sq_distances.size());
  double sum = 0.0;
  for (std::size_t j = 0; j < p.size(); ++j) {
    p[j] = std::exp(-(sq_distances[j] - dmin) * beta);
    sum += p[j];
  }
  for (double& v : p) v /= sum;
  return p;
}

namespace {

double perplexity_of(std::span<const double> sq_distances, double beta) {
  const auto p = conditional_row(sq_distances, beta);
  double h = 0.0;
  for (double v : p) {
    if (v > 0.0) h -= v * std::log2(v);
  }
  return std::exp2(h);
}

}  // namespace

PerplexityResult perplexity_search(std::span<const double> sq_distances, double target, double tol,
                                   std::size_t max_iterations) {
  const std::size_t n = sq_distances.size() + 1;
  if (!(target > 1.0) || target >= static_cast<double>(n)) {
    throw Error(ErrorKind::InfeasiblePerplexity,
                "perplexity " + std::to_string(target) + " is not in (1, n) for n = " + std::to_string(n));
  }
  double dmin = std::numeric_limits<double>::infinity();
  double dmax = 0.0;
  for (double d : sq_distances) {
    if (!(d >= 0.0) || !std::isfinite(d)) {
      throw Error(ErrorKind::NonFiniteValue, "squared distances must be finite and non-negative");
    }
    dmin = std::min(dmin, d);
    dmax = std::max(dmax, d);
  }
  if (dmax == 0.0) throw Error(ErrorKind::DegenerateDistances, "all distances are zero");

  // Perplexity decreases monotonically in beta. Start at the scale of the
  // distance spread and bisect on log(beta) once a bracket is found.
  const double spread = std::max(dmax - dmin, std::numeric_limits<double>::min());
  double log_beta = -std::log(spread);
  double lo = -std::numeric_limits<double>::infinity();
  double hi = std::numeric_limits<double>::infinity();

  PerplexityResult best;
  double best_err = std::numeric_limits<double>::infinity();
  for (std::size_t it = 1; it <= max_iterations; ++it) {
    const double beta = std::exp(log_beta);
    const double perp = perplexity_of(sq_distances, beta);
    const double err = std::abs(perp - target) / target;
    if (err < best_err) {
      best_err = err;
      best = {1.0 / std::sqrt(2.0 * beta), beta, perp, it, false};
    }
    best.iterations = it;
    if (err <= tol) {
      best.converged = true;
      return best;
    }
    if (perp > target) {
      lo = log_beta;  // too flat: sharpen
      log_beta = std::isinf(hi) ? log_beta + 2.0 : 0.5 * (lo + hi);
    } else {
      hi = log_beta;
      log_beta = std::isinf(lo) ? log_beta - 2.0 : 0.5 * (lo + hi);
    }
  }
  return best;
}

namespace {

std::vector<double> squared_distances(const EmbeddingMatrix& emb, Exec exec) {
  const std::size_t n = emb.rows();
  std::vector<double> d(n * n, 0.0);
  for_each_index(n, exec, [&](std::size_t i) {
    const auto a = emb.row(i);
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const auto b = emb.row(j);
      double s = 0.0;
      for (std::size_t k = 0; k < a.size(); ++k) {
        const double diff = static_cast<double>(a[k]) - static_cast<double>(b[k]);
        s += diff * diff;
      }
      d[i * n + j] = s;
    }
  });
  return d;
}

}  // namespace

JointProbabilities joint_probabilities(const EmbeddingMatrix& emb, double perplexity, Exec exec) {
  const std::size_t n = emb.rows();
  const auto dist = squared_distances(emb, exec);
  std::vector<double> cond(n * n, 0.0);
  std::vector<char> converged(n, 1);
  for_each_index(n, exec, [&](std::size_t i) {
    std::vector<double> row;
    row.reserve(n - 1);
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) row.push_back(dist[i * n + j]);
    }
    const auto res = perplexity_search(row, perplexity);
    converged[i] = res.converged ? 1 : 0;
    const auto p = conditional_row(row, res.beta);
    for (std::size_t j = 0, k = 0; j < n; ++j) {
      if (j != i) cond[i * n + j] = p[k++];
    }
  });

  JointProbabilities P;
  P.n = n;
  P.p.assign(n * n, 0.0);
  const double denom = 2.0 * static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      P.p[i * n + j] = (cond[i * n + j] + cond[j * n + i]) / denom;
    }
  }
  P.unconverged_rows = static_cast<std::size_t>(std::count(converged.begin(), converged.end(), 0));
  if (P.unconverged_rows > 0) {
    spdlog::warn("perplexity search did not converge for {} of {} points", P.unconverged_rows, n);
  }
  return P;
}

KlGradient kl_and_gradient(const JointProbabilities& P, std::span<const double> y, Exec exec,
                           double exaggeration) {
  const std::size_t n = P.n;
  // Unnormalized Student-t affinities, then Z summed row by row in order.
  std::vector<double> num(n * n, 0.0);
  std::vector<double> row_z(n, 0.0);
  for_each_index(n, exec, [&](std::size_t i) {
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const double dx = y[2 * i] - y[2 * j];
      const double dy = y[2 * i + 1] - y[2 * j + 1];
      const double w = 1.0 / (1.0 + dx * dx + dy * dy);
      num[i * n + j] = w;
      z += w;
    }
    row_z[i] = z;
  });
  double z = 0.0;
  for (double v : row_z) z += v;

  KlGradient out;
  out.grad.assign(2 * n, 0.0);
  std::vector<double> row_kl(n, 0.0);
  for_each_index(n, exec, [&](std::size_t i) {
    double gx = 0.0;
    double gy = 0.0;
    double kl = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const double w = num[i * n + j];
      const double q = w / z;
      const double p = P.p[i * n + j];
      if (p > 0.0) kl += p * std::log(p / q);
      const double coeff = (exaggeration * p - q) * w;
      gx += coeff * (y[2 * i] - y[2 * j]);
      gy += coeff * (y[2 * i + 1] - y[2 * j + 1]);
    }
    out.grad[2 * i] = 4.0 * gx;
    out.grad[2 * i + 1] = 4.0 * gy;
    row_kl[i] = kl;
  });
  for (double v : row_kl) out.kl += v;
  return out;
}

std::vector<double> initial_embedding(std::size_t n, const TsneConfig& cfg) {
  Pcg32 rng(cfg.seed, 0x7453u);
  std::vector<double> y(2 * n);
  for (double& v : y) v = cfg.init_sigma * rng.normal();
  return y;
}

Projection tsne(const EmbeddingMatrix& emb, const TsneConfig& cfg, Exec exec) {
  if (cfg.iterations < 1) throw Error(ErrorKind::InvalidArgument, "t-SNE needs at least one iteration");
  Projection proj;
  proj.input_points = emb.rows();

  EmbeddingMatrix data = emb;
  if (emb.rows() > cfg.point_cap) {
    std::vector<std::size_t> idx(emb.rows());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    Pcg32 rng(cfg.seed, 0x636170u);
    for (std::size_t i = 0; i < cfg.point_cap; ++i) {
      const std::size_t j = i + rng.below(static_cast<std::uint32_t>(idx.size() - i));
      std::swap(idx[i], idx[j]);
    }
    idx.resize(cfg.point_cap);
    std::sort(idx.begin(), idx.end());
    std::vector<std::string> ids;
    for (auto i : idx) ids.push_back(emb.ids()[i]);
    data = emb.select(ids);
    spdlog::info("t-SNE input subsampled from {} to {} points", emb.rows(), cfg.point_cap);
  }

  const std::size_t n = data.rows();
  if (n < 4) throw Error(ErrorKind::InvalidArgument, "t-SNE needs at least 4 points");
  if (cfg.perplexity >= static_cast<double>(n)) {
    throw Error(ErrorKind::InfeasiblePerplexity, "perplexity must be smaller than the number of points");
  }

  const auto P = joint_probabilities(data, cfg.perplexity, exec);
  auto y = initial_embedding(n, cfg);
  std::vector<double> update(2 * n, 0.0);
  std::vector<double> gains(2 * n, 1.0);

  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    const double exaggeration = it < cfg.exaggeration_iterations ? cfg.early_exaggeration : 1.0;
    const double momentum = it < cfg.momentum_switch ? cfg.initial_momentum : cfg.final_momentum;
    const auto kg = kl_and_gradient(P, y, exec, exaggeration);
    for (std::size_t k = 0; k < 2 * n; ++k) {
      const bool same_sign = (kg.grad[k] > 0.0) == (update[k] > 0.0);
      gains[k] = same_sign ? gains[k] * 0.8 : gains[k] + 0.2;
      gains[k] = std::max(gains[k], cfg.min_gain);
      update[k] = momentum * update[k] - cfg.learning_rate * gains[k] * kg.grad[k];
      y[k] += update[k];
      if (!std::isfinite(y[k])) {
        throw Error(ErrorKind::NonFiniteValue,
                    "t-SNE diverged at iteration " + std::to_string(it) + "; lower the learning rate");
      }
    }
  }

  proj.ids = data.ids();
  proj.final_kl = kl_and_gradient(P, y, exec).kl;
  proj.coords = std::move(y);
  proj.initialization = "gaussian(sigma=" + std::to_string(cfg.init_sigma) + ", seed=" +
                        std::to_string(cfg.seed) + ")";
  return proj;
}

}  // namespace dshift
