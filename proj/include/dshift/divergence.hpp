#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "dshift/embedding.hpp"
#include "dshift/error.hpp"
#include "dshift/grouping.hpp"
#include "dshift/image.hpp"
#include "dshift/parallel.hpp"

namespace dshift {

/// 256-bin intensity distribution per RGB channel.
struct PixelHistogram {
  std::array<std::array<double, 256>, 3> bins{};
};

PixelHistogram histogram(const RgbImage& img);

/// Jensen-Shannon divergence with base-2 logarithms, in [0, 1]. Throws
/// NotADistribution unless both inputs have equal length, non-negative
/// entries, and sum to 1 within 1e-9.
double jsd(std::span<const double> p, std::span<const double> q);

/// Mean of the per-channel divergences.
double jsd(const PixelHistogram& a, const PixelHistogram& b);

/// dot(u, v) / (|u| |v|). Throws DimMismatch or ZeroVector.
template <class T>
double cosine(std::span<const T> u, std::span<const T> v) {
  if (u.size() != v.size()) throw Error(ErrorKind::DimMismatch, "cosine needs equal dimensions");
  double dot = 0.0;
  double uu = 0.0;
  double vv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    const double a = u[i];
    const double b = v[i];
    dot += a * b;
    uu += a * a;
    vv += b * b;
  }
  if (uu == 0.0 || vv == 0.0) throw Error(ErrorKind::ZeroVector, "cosine of an all-zero vector");
  const double c = dot / (std::sqrt(uu) * std::sqrt(vv));
  return c > 1.0 ? 1.0 : (c < -1.0 ? -1.0 : c);
}

enum class Metric { Jsd, Cosine };
std::string_view to_string(Metric m) noexcept;

/// Lazily evaluated cross table value(i, j), i < rows, j < cols.
struct PairTable {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::function<double(std::size_t, std::size_t)> value;
};

/// Mean of value(row_index[a], col_index[b]) over all cross pairs. Each
/// row's partial sum is accumulated in column order and rows are summed in
/// order, whatever the Exec.
double pairwise_mean(const PairTable& table, std::span<const std::size_t> row_index,
                     std::span<const std::size_t> col_index, Exec exec = Exec::Parallel);

/// Mean over all |a| * |b| cross pairs.
double pairwise_metric(std::span<const PixelHistogram> a, std::span<const PixelHistogram> b,
                       Exec exec = Exec::Parallel);
double pairwise_metric(const EmbeddingMatrix& a, const EmbeddingMatrix& b,
                       Exec exec = Exec::Parallel);

struct BootstrapConfig {
  std::size_t iterations = 30;
  std::size_t sample_size = 250;
  std::uint64_t seed = 0;
  bool per_class = true;
  /// Sampling with replacement. Without it, each iteration takes
  /// min(sample_size, available) distinct items.
  bool replace = true;
};

struct DivergenceSummary {
  Metric metric = Metric::Jsd;
  std::string source;
  std::string target;
  Diagnosis cls = Diagnosis::Nevus;
  std::size_t sample_size = 0;
  std::vector<double> values;
  double mean = 0;
  double median = 0;
  double std = 0;  // population standard deviation
};

/// Fills mean, median and std from values.
void finalize_summary(DivergenceSummary& s);

enum class PairCache { Auto, Always, Never };

/// One pairwise mean per iteration. Iteration k draws its source sample from
/// the stream (seed, 2k) and its target sample from (seed, 2k + 1). With
/// PairCache::Auto the full cross table is precomputed when that is cheaper
/// than evaluating the sampled pairs directly; values are identical either
/// way.
std::vector<double> bootstrap_values(const PairTable& table, const BootstrapConfig& cfg,
                                     Exec exec = Exec::Parallel, PairCache cache = PairCache::Auto);

/// Per-image inputs for the two metrics, keyed by image id.
struct DivergenceInputs {
  std::unordered_map<std::string, PixelHistogram> histograms;
  const EmbeddingMatrix* embeddings = nullptr;
};

DivergenceSummary bootstrap_divergence(const GroupedDataset& source, const GroupedDataset& target,
                                       Diagnosis cls, Metric metric, const BootstrapConfig& cfg,
                                       const DivergenceInputs& inputs, Exec exec = Exec::Parallel);

std::map<std::size_t, DivergenceSummary> sample_size_sweep(
    const GroupedDataset& source, const GroupedDataset& target, Diagnosis cls, Metric metric,
    std::span<const std::size_t> sizes, const BootstrapConfig& cfg, const DivergenceInputs& inputs,
    Exec exec = Exec::Parallel);

}  // namespace dshift
