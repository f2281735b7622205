#include "dshift/image_stats.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "dshift/error.hpp"
#include "dshift/rng.hpp"

namespace dshift {

HsvPlanes rgb_to_hsv(const RgbImage& img) {
  HsvPlanes out;
  out.width = img.width();
  out.height = img.height();
  const std::size_t n = img.pixel_count();
  out.hue.resize(n);
  out.saturation.resize(n);
  out.value.resize(n);
  const auto px = img.data();
  for (std::size_t i = 0; i < n; ++i) {
    const int r = px[3 * i];
    const int g = px[3 * i + 1];
    const int b = px[3 * i + 2];
    const int mx = std::max({r, g, b});
    const int mn = std::min({r, g, b});
    const int chroma = mx - mn;
    out.value[i] = mx / 255.0;
    out.saturation[i] = mx == 0 ? 0.0 : static_cast<double>(chroma) / mx;
    double h = 0.0;
    if (chroma != 0) {
      if (mx == r) {
        h = 60.0 * static_cast<double>(g - b) / chroma;
      } else if (mx == g) {
        h = 60.0 * (2.0 + static_cast<double>(b - r) / chroma);
      } else {
        h = 60.0 * (4.0 + static_cast<double>(r - g) / chroma);
      }
      if (h < 0.0) h += 360.0;
      if (h >= 360.0) h -= 360.0;
    }
    out.hue[i] = h;
  }
  return out;
}

std::vector<double> laplacian(std::span<const double> plane, std::size_t width, std::size_t height) {
  std::vector<double> out(width * height);
  auto at = [&](std::size_t x, std::size_t y) { return plane[y * width + x]; };
  for (std::size_t y = 0; y < height; ++y) {
    const std::size_t up = y == 0 ? 0 : y - 1;
    const std::size_t down = y + 1 == height ? y : y + 1;
    for (std::size_t x = 0; x < width; ++x) {
      const std::size_t left = x == 0 ? 0 : x - 1;
      const std::size_t right = x + 1 == width ? x : x + 1;
      out[y * width + x] = at(x, up) + at(x, down) + at(left, y) + at(right, y) - 4.0 * at(x, y);
    }
  }
  return out;
}

namespace {

double mean(std::span<const double> v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double population_variance(std::span<const double> v) {
  const double m = mean(v);
  double acc = 0.0;
  for (double x : v) acc += (x - m) * (x - m);
  return acc / static_cast<double>(v.size());
}

}  // namespace

ImageStatsRecord image_stats(const RgbImage& img) {
  const auto hsv = rgb_to_hsv(img);
  ImageStatsRecord r;
  r.brightness = mean(hsv.value);
  r.rms_contrast = std::sqrt(population_variance(hsv.value));
  r.saturation = mean(hsv.saturation);

  double sin_sum = 0.0;
  double cos_sum = 0.0;
  std::size_t chromatic = 0;
  for (std::size_t i = 0; i < hsv.hue.size(); ++i) {
    if (hsv.saturation[i] <= 0.0) continue;
    const double rad = hsv.hue[i] * std::numbers::pi / 180.0;
    sin_sum += std::sin(rad);
    cos_sum += std::cos(rad);
    ++chromatic;
  }
  if (chromatic > 0) {
    double deg = std::atan2(sin_sum, cos_sum) * 180.0 / std::numbers::pi;
    if (deg < 0.0) deg += 360.0;
    if (deg >= 360.0) deg -= 360.0;
    r.hue = deg;
  }

  r.blur = population_variance(laplacian(hsv.value, hsv.width, hsv.height));
  return r;
}

std::vector<ImageStatsRecord> image_stats_batch(std::span<const RgbImage> images, Exec exec) {
  std::vector<ImageStatsRecord> out(images.size());
  for_each_index(images.size(), exec, [&](std::size_t i) { out[i] = image_stats(images[i]); });
  return out;
}

std::string_view to_string(Property p) noexcept {
  switch (p) {
    case Property::Brightness: return "brightness";
    case Property::RmsContrast: return "rms_contrast";
    case Property::Saturation: return "saturation";
    case Property::Hue: return "hue";
    case Property::Blur: return "blur";
  }
  return "";
}

double value_of(const ImageStatsRecord& r, Property p) noexcept {
  switch (p) {
    case Property::Brightness: return r.brightness;
    case Property::RmsContrast: return r.rms_contrast;
    case Property::Saturation: return r.saturation;
    case Property::Hue: return r.hue;
    case Property::Blur: return r.blur;
  }
  return 0.0;
}

namespace {

double quantile_sorted(const std::vector<double>& sorted, double p) {
  const double pos = p * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

}  // namespace

BoxSummary summarize_values(std::vector<double> values, bool exclude_outliers) {
  if (values.empty()) throw Error(ErrorKind::EmptyInput, "cannot summarize an empty sample");
  std::sort(values.begin(), values.end());
  BoxSummary s;
  s.n = values.size();
  s.outliers_excluded = exclude_outliers;
  s.q1 = quantile_sorted(values, 0.25);
  s.median = quantile_sorted(values, 0.5);
  s.q3 = quantile_sorted(values, 0.75);
  const double iqr = s.q3 - s.q1;
  s.lower_fence = s.q1 - 1.5 * iqr;
  s.upper_fence = s.q3 + 1.5 * iqr;
  s.min = values.front();
  s.max = values.back();
  if (exclude_outliers) {
    // q1 and q3 are always inside the fences, so both searches succeed.
    s.min = *std::lower_bound(values.begin(), values.end(), s.lower_fence);
    s.max = *(std::upper_bound(values.begin(), values.end(), s.upper_fence) - 1);
    s.min = std::min(s.min, s.q1);
    s.max = std::max(s.max, s.q3);
  }
  return s;
}

BoxSummary summarize(std::span<const ImageStatsRecord> records, Property property,
                     bool exclude_outliers) {
  std::vector<double> values;
  values.reserve(records.size());
  for (const auto& r : records) values.push_back(value_of(r, property));
  return summarize_values(std::move(values), exclude_outliers);
}

std::vector<std::string> sample_per_class(const GroupedDataset& group, Diagnosis cls, std::size_t n,
                                          std::uint64_t seed) {
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < group.size(); ++i) {
    if (group.member_classes[i] == cls) candidates.push_back(i);
  }
  if (candidates.empty()) {
    throw Error(ErrorKind::EmptyClass,
                "group " + group.abbrev + " has no " + std::string(to_string(cls)) + " images",
                {group.abbrev});
  }
  if (n < candidates.size()) {
    // Partial Fisher-Yates; the first n slots hold the sample.
    Pcg32 rng(seed, fnv1a64(to_string(cls)));
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t j = i + rng.below(static_cast<std::uint32_t>(candidates.size() - i));
      std::swap(candidates[i], candidates[j]);
    }
    candidates.resize(n);
    std::sort(candidates.begin(), candidates.end());
  }
  std::vector<std::string> out;
  out.reserve(candidates.size());
  for (auto i : candidates) out.push_back(group.member_ids[i]);
  return out;
}

}  // namespace dshift
