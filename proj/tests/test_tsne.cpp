#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "dshift/tsne.hpp"
#include "test_util.hpp"

using namespace dshift;

namespace {

EmbeddingMatrix gaussian_points(std::size_t n, std::size_t dim, std::uint64_t seed, double offset = 0.0,
                                const std::string& prefix = "p") {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0, 1);
  std::vector<std::string> ids;
  std::vector<float> values;
  for (std::size_t i = 0; i < n; ++i) {
    ids.push_back(prefix + std::to_string(i));
    for (std::size_t k = 0; k < dim; ++k) values.push_back(static_cast<float>(g(rng) + (k == 0 ? offset : 0.0)));
  }
  return EmbeddingMatrix(ids, dim, values);
}

EmbeddingMatrix concat(const EmbeddingMatrix& a, const EmbeddingMatrix& b) {
  auto ids = a.ids();
  ids.insert(ids.end(), b.ids().begin(), b.ids().end());
  auto values = a.values();
  values.insert(values.end(), b.values().begin(), b.values().end());
  return EmbeddingMatrix(ids, a.dim(), values);
}

double entropy_bits(std::span<const double> d, double beta) {
  double z = 0;
  for (double x : d) z += std::exp(-beta * x);
  double h = 0;
  for (double x : d) {
    const double p = std::exp(-beta * x) / z;
    if (p > 0) h -= p * std::log2(p);
  }
  return h;
}

// Plain bisection on sigma, independent of the library's log-beta search.
double oracle_sigma(std::span<const double> d, double target) {
  double lo = 1e-3, hi = 1e3;
  for (int i = 0; i < 200; ++i) {
    const double mid = std::sqrt(lo * hi);
    const double perp = std::exp2(entropy_bits(d, 1.0 / (2 * mid * mid)));
    (perp < target ? lo : hi) = mid;
  }
  return std::sqrt(lo * hi);
}

double dist(std::span<const double> y, std::size_t i, std::size_t j) {
  return std::hypot(y[2 * i] - y[2 * j], y[2 * i + 1] - y[2 * j + 1]);
}

}  // namespace

TEST_CASE("perplexity of equal distances is the count, for any bandwidth") {
  const std::vector<double> d(30, 2.5);
  const auto r = perplexity_search(d, 30.0 - 1e-9);
  CHECK(r.perplexity == doctest::Approx(30.0).epsilon(1e-9));
  CHECK(r.converged);
  const auto row = conditional_row(d, 0.37);
  for (double p : row) CHECK(p == doctest::Approx(1.0 / 30.0).epsilon(1e-12));
}

TEST_CASE("two-scale distances: bandwidth agrees with an independent bisection") {
  std::vector<double> d;
  for (int i = 0; i < 10; ++i) d.push_back(1.0 + 0.01 * i);
  for (int i = 0; i < 20; ++i) d.push_back(25.0 + 0.1 * i);
  for (double target : {3.0, 8.0, 15.0, 25.0}) {
    const auto r = perplexity_search(d, target, 1e-12, 200);
    CHECK(r.converged);
    const double ref = oracle_sigma(d, target);
    CHECK(std::abs(r.sigma - ref) / ref < 1e-6);
    CHECK(std::abs(r.perplexity - target) / target < 1e-3);
  }
}

TEST_CASE("perplexity search errors") {
  CHECK_ERROR_KIND(perplexity_search(std::vector<double>(5, 0.0), 3.0), ErrorKind::DegenerateDistances);
  CHECK_ERROR_KIND(perplexity_search(std::vector<double>{1, 2, 3}, 4.0), ErrorKind::InfeasiblePerplexity);
  CHECK_ERROR_KIND(perplexity_search(std::vector<double>{1, 2, 3}, 1.0), ErrorKind::InfeasiblePerplexity);
  CHECK_ERROR_KIND(perplexity_search(std::vector<double>{1, -2, 3}, 2.0), ErrorKind::NonFiniteValue);
}

TEST_CASE("joint probabilities are symmetric, non-negative and sum to one") {
  const auto emb = gaussian_points(50, 6, 2);
  const auto P = joint_probabilities(emb, 10.0, Exec::Serial);
  double total = 0;
  for (std::size_t i = 0; i < P.n; ++i) {
    CHECK(P.at(i, i) == 0.0);
    for (std::size_t j = 0; j < P.n; ++j) {
      CHECK(P.at(i, j) >= 0.0);
      CHECK(P.at(i, j) == P.at(j, i));
      total += P.at(i, j);
    }
  }
  CHECK(std::abs(total - 1.0) < 1e-9);
  CHECK(P.unconverged_rows == 0);
  CHECK(joint_probabilities(emb, 10.0, Exec::Parallel).p == P.p);
}

TEST_CASE("analytic gradient matches central differences at n=20") {
  const auto emb = gaussian_points(20, 5, 3);
  const auto P = joint_probabilities(emb, 5.0, Exec::Serial);
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g(0, 1);
  std::vector<double> y(40);
  for (auto& v : y) v = g(rng);
  const auto kg = kl_and_gradient(P, y, Exec::Serial);
  std::vector<double> fd(40);
  const double h = 1e-5;
  for (std::size_t k = 0; k < y.size(); ++k) {
    auto yp = y, ym = y;
    yp[k] += h;
    ym[k] -= h;
    fd[k] = (kl_and_gradient(P, yp, Exec::Serial).kl - kl_and_gradient(P, ym, Exec::Serial).kl) / (2 * h);
  }
  double num = 0, den = 0;
  for (std::size_t k = 0; k < y.size(); ++k) {
    num += (kg.grad[k] - fd[k]) * (kg.grad[k] - fd[k]);
    den += fd[k] * fd[k];
  }
  CHECK(std::sqrt(num / den) < 1e-4);
  CHECK(kg.kl >= 0.0);
}

TEST_CASE("KL and gradient are translation invariant and exec independent") {
  const auto emb = gaussian_points(15, 4, 5);
  const auto P = joint_probabilities(emb, 4.0, Exec::Serial);
  std::vector<double> y(30);
  for (std::size_t k = 0; k < y.size(); ++k) y[k] = 0.25 * static_cast<double>(k % 7) - 0.1 * static_cast<double>(k % 3);
  auto shifted = y;
  for (std::size_t k = 0; k < y.size(); k += 2) {
    shifted[k] += 8.0;
    shifted[k + 1] -= 8.0;
  }
  const auto a = kl_and_gradient(P, y, Exec::Serial);
  const auto b = kl_and_gradient(P, shifted, Exec::Serial);
  CHECK(a.kl == doctest::Approx(b.kl).epsilon(1e-12));
  for (std::size_t k = 0; k < y.size(); ++k) CHECK(a.grad[k] == doctest::Approx(b.grad[k]).epsilon(1e-9));
  const auto c = kl_and_gradient(P, y, Exec::Parallel);
  CHECK(c.kl == a.kl);
  CHECK(c.grad == a.grad);
}

TEST_CASE("single iteration equals one hand-stepped update") {
  const auto emb = gaussian_points(4, 3, 6);
  TsneConfig cfg;
  cfg.perplexity = 2.0;
  cfg.iterations = 1;
  cfg.seed = 9;
  const auto proj = tsne(emb, cfg, Exec::Serial);
  const auto P = joint_probabilities(emb, cfg.perplexity, Exec::Serial);
  const auto y0 = initial_embedding(4, cfg);
  const auto g = kl_and_gradient(P, y0, Exec::Serial, cfg.early_exaggeration);
  for (std::size_t k = 0; k < 8; ++k) {
    // From zero velocity the gain becomes 1.2 where the gradient is positive, 0.8 otherwise.
    const double gain = g.grad[k] > 0 ? 1.2 : 0.8;
    CHECK(proj.coords[k] == doctest::Approx(y0[k] - cfg.learning_rate * gain * g.grad[k]).epsilon(1e-12));
  }
  CHECK(proj.ids == emb.ids());
}

TEST_CASE("two separated clusters are recovered") {
  const auto emb = concat(gaussian_points(20, 10, 7, 0.0, "a"), gaussian_points(20, 10, 8, 10.0, "b"));
  TsneConfig cfg;
  cfg.perplexity = 10.0;
  cfg.seed = 1;
  const auto proj = tsne(emb, cfg);
  const std::size_t n = 40;
  double silhouette = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double own = 0, other = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      ((i < 20) == (j < 20) ? own : other) += dist(proj.coords, i, j);
    }
    own /= 19.0;
    other /= 20.0;
    silhouette += (other - own) / std::max(own, other);
  }
  silhouette /= n;
  CHECK(silhouette > 0.5);
  CHECK(proj.final_kl >= 0.0);
  for (double v : proj.coords) CHECK(std::isfinite(v));
}

TEST_CASE("a duplicated point lands next to its twin") {
  auto base = gaussian_points(40, 8, 10);
  auto ids = base.ids();
  auto values = base.values();
  ids.push_back("twin");
  values.insert(values.end(), base.row(3).begin(), base.row(3).end());
  const EmbeddingMatrix emb(ids, 8, values);
  TsneConfig cfg;
  cfg.perplexity = 8.0;
  cfg.seed = 2;
  const auto proj = tsne(emb, cfg);
  const std::size_t n = emb.rows();
  std::vector<double> all;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) all.push_back(dist(proj.coords, i, j));
  }
  std::sort(all.begin(), all.end());
  const double cutoff = all[all.size() / 20];
  CHECK(dist(proj.coords, 3, n - 1) <= cutoff);
}

TEST_CASE("t-SNE is reproducible per seed and across exec modes") {
  const auto emb = gaussian_points(30, 5, 11);
  TsneConfig cfg;
  cfg.perplexity = 8.0;
  cfg.iterations = 300;
  cfg.seed = 4;
  const auto a = tsne(emb, cfg, Exec::Serial);
  const auto b = tsne(emb, cfg, Exec::Parallel);
  CHECK(a.coords == b.coords);
  CHECK(a.final_kl == b.final_kl);
  cfg.seed = 5;
  CHECK(tsne(emb, cfg, Exec::Serial).coords != a.coords);
}

TEST_CASE("t-SNE preconditions") {
  TsneConfig cfg;
  cfg.perplexity = 2.0;
  CHECK_ERROR_KIND(tsne(gaussian_points(3, 2, 1), cfg), ErrorKind::InvalidArgument);
  cfg.perplexity = 6.0;
  CHECK_ERROR_KIND(tsne(gaussian_points(6, 2, 1), cfg), ErrorKind::InfeasiblePerplexity);
  cfg.perplexity = 2.0;
  cfg.iterations = 0;
  CHECK_ERROR_KIND(tsne(gaussian_points(6, 2, 1), cfg), ErrorKind::InvalidArgument);
}

TEST_CASE("point cap subsamples deterministically") {
  const auto emb = gaussian_points(30, 3, 12);
  TsneConfig cfg;
  cfg.perplexity = 5.0;
  cfg.iterations = 50;
  cfg.point_cap = 12;
  const auto proj = tsne(emb, cfg);
  CHECK(proj.ids.size() == 12);
  CHECK(proj.input_points == 30);
  CHECK(std::is_sorted(proj.ids.begin(), proj.ids.end(), [&](const auto& x, const auto& y) {
    return *emb.index_of(x) < *emb.index_of(y);
  }));
  CHECK(tsne(emb, cfg).ids == proj.ids);
}

TEST_CASE("embedding CSV round trip and errors") {
  const EmbeddingMatrix m({"a", "b"}, 3, {1.5f, -2.25f, 0.1f, 3e-8f, 7.0f, -0.333333343f});
  CHECK(read_embeddings(write_embeddings(m)) == m);
  CHECK_ERROR_KIND(read_embeddings("image_id,f0\na,NaN\n"), ErrorKind::NonFiniteValue);
  CHECK_ERROR_KIND(read_embeddings("image_id,f0,f1\na,1\n"), ErrorKind::RaggedRows);
  CHECK_ERROR_KIND(read_embeddings("image_id,f0\na,1\na,2\n"), ErrorKind::DuplicateId);
  const auto big = gaussian_points(250, 512, 13);
  const auto back = read_embeddings(write_embeddings(big));
  CHECK(back.rows() == 250);
  CHECK(back.dim() == 512);
  CHECK(back == big);
}
