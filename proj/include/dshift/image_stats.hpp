#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dshift/grouping.hpp"
#include "dshift/image.hpp"
#include "dshift/parallel.hpp"

namespace dshift {

/// Per-pixel HSV planes. Hue in degrees [0, 360), saturation and value in [0, 1].
struct HsvPlanes {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> hue;
  std::vector<double> saturation;
  std::vector<double> value;
};

/// Hexcone conversion; hue is 0 where saturation is 0.
HsvPlanes rgb_to_hsv(const RgbImage& img);

struct ImageStatsRecord {
  double brightness = 0;    // mean V
  double rms_contrast = 0;  // population std of V
  double saturation = 0;    // mean S
  double hue = 0;           // circular mean of H over pixels with S > 0, degrees
  double blur = 0;          // population variance of the 4-neighbour Laplacian of V
};

ImageStatsRecord image_stats(const RgbImage& img);

/// Stats for a batch of images; Exec selects the serial or OpenMP build.
std::vector<ImageStatsRecord> image_stats_batch(std::span<const RgbImage> images,
                                                Exec exec = Exec::Parallel);

/// Laplacian response [[0,1,0],[1,-4,1],[0,1,0]] with replicated borders.
std::vector<double> laplacian(std::span<const double> plane, std::size_t width, std::size_t height);

enum class Property { Brightness, RmsContrast, Saturation, Hue, Blur };

std::string_view to_string(Property p) noexcept;
double value_of(const ImageStatsRecord& r, Property p) noexcept;

/// Five-number box summary with Tukey fences at 1.5 IQR. Quartiles use
/// linear interpolation between order statistics at position p * (n - 1)
/// (Hyndman-Fan type 7). When outliers are excluded, min and max are taken
/// over values inside the fences; quartiles always use every value.
struct BoxSummary {
  double min = 0;
  double q1 = 0;
  double median = 0;
  double q3 = 0;
  double max = 0;
  double lower_fence = 0;
  double upper_fence = 0;
  std::size_t n = 0;
  bool outliers_excluded = false;
};

inline constexpr std::string_view kQuartileMethod = "linear interpolation, Hyndman-Fan type 7";

BoxSummary summarize_values(std::vector<double> values, bool exclude_outliers);
BoxSummary summarize(std::span<const ImageStatsRecord> records, Property property,
                     bool exclude_outliers);

/// Without-replacement sample of min(n, available) images of one class,
/// returned in group order. Deterministic under seed.
std::vector<std::string> sample_per_class(const GroupedDataset& group, Diagnosis cls,
                                          std::size_t n = 450, std::uint64_t seed = 0);

}  // namespace dshift
