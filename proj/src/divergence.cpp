#include "dshift/divergence.hpp"

#include <algorithm>
#include <numeric>

#include "dshift/rng.hpp"

namespace dshift {

PixelHistogram histogram(const RgbImage& img) {
  std::array<std::array<std::size_t, 256>, 3> counts{};
  const auto px = img.data();
  for (std::size_t i = 0; i < img.pixel_count(); ++i) {
    for (std::size_t c = 0; c < 3; ++c) ++counts[c][px[3 * i + c]];
  }
  PixelHistogram h;
  const double n = static_cast<double>(img.pixel_count());
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t b = 0; b < 256; ++b) h.bins[c][b] = static_cast<double>(counts[c][b]) / n;
  }
  return h;
}

namespace {

void check_distribution(std::span<const double> p, const char* name) {
  double sum = 0.0;
  for (double x : p) {
    if (!(x >= 0.0) || !std::isfinite(x)) {
      throw Error(ErrorKind::NotADistribution, std::string(name) + " has a negative or non-finite entry");
    }
    sum += x;
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    throw Error(ErrorKind::NotADistribution, std::string(name) + " does not sum to 1");
  }
}

// x * log2(x / m), with 0 log 0 = 0.
inline double kl_term(double x, double m) { return x > 0.0 ? x * std::log2(x / m) : 0.0; }

double jsd_unchecked(const double* p, const double* q, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double a = p[i];
    const double b = q[i];
    if (a == b) continue;  // both terms vanish
    const double m = 0.5 * (a + b);
    acc += kl_term(a, m) + kl_term(b, m);
  }
  const double d = 0.5 * acc;
  return d < 0.0 ? 0.0 : (d > 1.0 ? 1.0 : d);
}

}  // namespace

double jsd(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size() || p.empty()) {
    throw Error(ErrorKind::NotADistribution, "distributions differ in length");
  }
  check_distribution(p, "p");
  check_distribution(q, "q");
  return jsd_unchecked(p.data(), q.data(), p.size());
}

double jsd(const PixelHistogram& a, const PixelHistogram& b) {
  double acc = 0.0;
  for (std::size_t c = 0; c < 3; ++c) acc += jsd_unchecked(a.bins[c].data(), b.bins[c].data(), 256);
  return acc / 3.0;
}

std::string_view to_string(Metric m) noexcept { return m == Metric::Jsd ? "jsd" : "cosine"; }

double pairwise_mean(const PairTable& table, std::span<const std::size_t> row_index,
                     std::span<const std::size_t> col_index, Exec exec) {
  if (row_index.empty() || col_index.empty()) {
    throw Error(ErrorKind::EmptyInput, "pairwise metric needs non-empty sets");
  }
  std::vector<double> row_sums(row_index.size());
  for_each_index(row_index.size(), exec, [&](std::size_t a) {
    double s = 0.0;
    for (std::size_t b = 0; b < col_index.size(); ++b) s += table.value(row_index[a], col_index[b]);
    row_sums[a] = s;
  });
  double total = 0.0;
  for (double s : row_sums) total += s;
  return total / (static_cast<double>(row_index.size()) * static_cast<double>(col_index.size()));
}

namespace {

std::vector<std::size_t> iota_index(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), std::size_t{0});
  return v;
}

}  // namespace

double pairwise_metric(std::span<const PixelHistogram> a, std::span<const PixelHistogram> b, Exec exec) {
  PairTable t{a.size(), b.size(), [&](std::size_t i, std::size_t j) { return jsd(a[i], b[j]); }};
  return pairwise_mean(t, iota_index(a.size()), iota_index(b.size()), exec);
}

double pairwise_metric(const EmbeddingMatrix& a, const EmbeddingMatrix& b, Exec exec) {
  PairTable t{a.rows(), b.rows(),
              [&](std::size_t i, std::size_t j) { return cosine(a.row(i), b.row(j)); }};
  return pairwise_mean(t, iota_index(a.rows()), iota_index(b.rows()), exec);
}

void finalize_summary(DivergenceSummary& s) {
  if (s.values.empty()) {
    s.mean = s.median = s.std = 0.0;
    return;
  }
  const double n = static_cast<double>(s.values.size());
  double sum = 0.0;
  for (double v : s.values) sum += v;
  s.mean = sum / n;
  double sq = 0.0;
  for (double v : s.values) sq += (v - s.mean) * (v - s.mean);
  s.std = std::sqrt(sq / n);
  std::vector<double> sorted = s.values;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t mid = sorted.size() / 2;
  s.median = sorted.size() % 2 ? sorted[mid] : 0.5 * (sorted[mid - 1] + sorted[mid]);
}

namespace {

std::vector<std::size_t> draw(std::size_t pool, const BootstrapConfig& cfg, std::uint64_t stream) {
  Pcg32 rng(cfg.seed, stream);
  std::vector<std::size_t> out;
  if (cfg.replace) {
    out.resize(cfg.sample_size);
    for (auto& idx : out) idx = rng.below(static_cast<std::uint32_t>(pool));
    return out;
  }
  out = iota_index(pool);
  const std::size_t k = std::min(cfg.sample_size, pool);
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + rng.below(static_cast<std::uint32_t>(pool - i));
    std::swap(out[i], out[j]);
  }
  out.resize(k);
  return out;
}

}  // namespace

std::vector<double> bootstrap_values(const PairTable& table, const BootstrapConfig& cfg, Exec exec,
                                     PairCache cache) {
  if (cfg.iterations < 1) throw Error(ErrorKind::InvalidArgument, "bootstrap needs >= 1 iteration");
  if (cfg.sample_size < 2) throw Error(ErrorKind::InvalidArgument, "bootstrap sample_size must be >= 2");
  if (table.rows == 0 || table.cols == 0) {
    throw Error(ErrorKind::EmptyClass, "bootstrap needs at least one item on each side");
  }

  std::vector<std::vector<std::size_t>> src(cfg.iterations);
  std::vector<std::vector<std::size_t>> tgt(cfg.iterations);
  for (std::size_t k = 0; k < cfg.iterations; ++k) {
    src[k] = draw(table.rows, cfg, 2 * k);
    tgt[k] = draw(table.cols, cfg, 2 * k + 1);
  }

  const double full = static_cast<double>(table.rows) * static_cast<double>(table.cols);
  const double sampled = static_cast<double>(cfg.iterations) *
                         static_cast<double>(src[0].size()) * static_cast<double>(tgt[0].size());
  const bool use_cache = cache == PairCache::Always || (cache == PairCache::Auto && full <= sampled);

  PairTable effective = table;
  std::vector<double> dense;
  if (use_cache) {
    dense.resize(table.rows * table.cols);
    for_each_index(table.rows, exec, [&](std::size_t i) {
      for (std::size_t j = 0; j < table.cols; ++j) dense[i * table.cols + j] = table.value(i, j);
    });
    const std::size_t cols = table.cols;
    effective.value = [&dense, cols](std::size_t i, std::size_t j) { return dense[i * cols + j]; };
  }

  std::vector<double> values(cfg.iterations);
  for (std::size_t k = 0; k < cfg.iterations; ++k) {
    values[k] = pairwise_mean(effective, src[k], tgt[k], exec);
  }
  return values;
}

namespace {

std::vector<std::string> class_members(const GroupedDataset& g, Diagnosis cls) {
  auto ids = g.ids_of(cls);
  if (ids.empty()) {
    throw Error(ErrorKind::EmptyClass,
                "group " + g.abbrev + " has no " + std::string(to_string(cls)) + " images",
                {g.abbrev});
  }
  return ids;
}

}  // namespace

DivergenceSummary bootstrap_divergence(const GroupedDataset& source, const GroupedDataset& target,
                                       Diagnosis cls, Metric metric, const BootstrapConfig& cfg,
                                       const DivergenceInputs& inputs, Exec exec) {
  if (!cfg.per_class) {
    throw Error(ErrorKind::InvalidArgument, "divergence summaries are always computed per class");
  }
  const auto src_ids = class_members(source, cls);
  const auto tgt_ids = class_members(target, cls);

  DivergenceSummary summary;
  summary.metric = metric;
  summary.source = source.abbrev;
  summary.target = target.abbrev;
  summary.cls = cls;
  summary.sample_size = cfg.sample_size;

  if (metric == Metric::Jsd) {
    auto lookup = [&](const std::vector<std::string>& ids) {
      std::vector<const PixelHistogram*> out;
      out.reserve(ids.size());
      for (const auto& id : ids) {
        auto it = inputs.histograms.find(id);
        if (it == inputs.histograms.end()) {
          throw Error(ErrorKind::MissingInput, "no histogram for image " + id, {id});
        }
        out.push_back(&it->second);
      }
      return out;
    };
    const auto a = lookup(src_ids);
    const auto b = lookup(tgt_ids);
    PairTable t{a.size(), b.size(), [&](std::size_t i, std::size_t j) { return jsd(*a[i], *b[j]); }};
    summary.values = bootstrap_values(t, cfg, exec);
  } else {
    if (!inputs.embeddings) {
      throw Error(ErrorKind::MissingInput, "cosine similarity needs an embedding matrix");
    }
    const auto a = inputs.embeddings->select(src_ids);
    const auto b = inputs.embeddings->select(tgt_ids);
    PairTable t{a.rows(), b.rows(),
                [&](std::size_t i, std::size_t j) { return cosine(a.row(i), b.row(j)); }};
    summary.values = bootstrap_values(t, cfg, exec);
  }
  finalize_summary(summary);
  return summary;
}

std::map<std::size_t, DivergenceSummary> sample_size_sweep(
    const GroupedDataset& source, const GroupedDataset& target, Diagnosis cls, Metric metric,
    std::span<const std::size_t> sizes, const BootstrapConfig& cfg, const DivergenceInputs& inputs,
    Exec exec) {
  if (sizes.empty()) throw Error(ErrorKind::InvalidArgument, "sample size sweep needs at least one size");
  std::map<std::size_t, DivergenceSummary> out;
  for (auto size : sizes) {
    BootstrapConfig c = cfg;
    c.sample_size = size;
    out.emplace(size, bootstrap_divergence(source, target, cls, metric, c, inputs, exec));
  }
  return out;
}

}  // namespace dshift
