#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "dshift/divergence.hpp"
#include "dshift/embedding.hpp"
#include "dshift/grouping.hpp"
#include "dshift/image.hpp"
#include "dshift/metadata.hpp"
#include "dshift/metrics.hpp"

namespace dshift {

/// Acquisition-style perturbation applied on top of a base corpus. Offsets
/// and noise are in units of full intensity range (1.0 = 255 levels).
struct ShiftSpec {
  double brightness_offset = 0.0;   // [-0.5, 0.5]
  double contrast_scale = 1.0;      // > 0, about mid-grey
  double hue_rotation = 0.0;        // degrees
  double noise_sigma = 0.0;         // per-pixel Gaussian noise
  double illumination_jitter = 0.0; // per-image Gaussian brightness offset
  std::uint64_t seed = 0;           // drives noise and jitter only

  bool is_identity() const noexcept {
    return brightness_offset == 0.0 && contrast_scale == 1.0 && hue_rotation == 0.0 &&
           noise_sigma == 0.0 && illumination_jitter == 0.0;
  }
};

/// Metadata assigned to generated records.
struct CorpusLayout {
  std::string id_prefix = "syn";
  Origin origin = Origin::ham();
  int age_min = 35;
  int age_max = 85;
  std::vector<std::string> localizations = {"anterior torso", "posterior torso", "upper extremity",
                                            "lower extremity"};
  double melanoma_fraction = 0.35;
  bool lesion_ids = true;
  std::size_t width = 64;
  std::size_t height = 64;
};

struct SynthCorpus {
  std::vector<RgbImage> images;  // images[i] belongs to catalog.records()[i]
  Catalog catalog;
  ShiftSpec applied;
};

/// Base image i depends only on (base_seed, i), so corpora generated with
/// the same base seed and different shifts are paired image by image.
SynthCorpus gen_corpus(std::size_t n, std::uint64_t base_seed, const ShiftSpec& shift,
                       const CorpusLayout& layout = {});

/// Generates the unshifted base image i and its diagnosis.
RgbImage base_image(std::uint64_t base_seed, std::size_t index, Diagnosis cls,
                    std::size_t width = 64, std::size_t height = 64);
RgbImage apply_shift(const RgbImage& img, const ShiftSpec& shift, std::size_t index);

/// All corpus members as one dataset (Other diagnoses skipped).
GroupedDataset corpus_group(const SynthCorpus& corpus, std::string abbrev);

/// Model-free embedding: image statistics followed by Gaussian noise
/// dimensions keyed by (noise_seed, index).
inline constexpr std::size_t kSyntheticStatDims = 6;
std::vector<float> synthetic_embedding(const RgbImage& img, std::uint64_t noise_seed,
                                       std::size_t index, std::size_t noise_dims = 10,
                                       double noise_sigma = 0.05);
EmbeddingMatrix embed_corpus(const SynthCorpus& corpus, std::uint64_t noise_seed,
                             std::size_t noise_dims = 10, double noise_sigma = 0.05);

/// Mean darkness of the central lesion region, 1 - mean(V).
double lesion_darkness(const RgbImage& img);

/// One-feature melanoma scorer: logistic in lesion darkness, with the
/// decision point fitted to the midpoint of the class means.
struct DarknessClassifier {
  double midpoint = 0.5;
  double scale = 0.05;

  static DarknessClassifier fit(const std::vector<RgbImage>& images,
                                const std::vector<Diagnosis>& labels);
  double score(const RgbImage& img) const;
};

/// Bootstrap divergence between the base corpus and brightness-shifted
/// copies, one summary per delta. Deltas must be ascending and contain 0.
std::vector<DivergenceSummary> monotonicity_experiment(Metric metric,
                                                       const std::vector<double>& deltas,
                                                       std::size_t n, const BootstrapConfig& cfg,
                                                       Diagnosis cls = Diagnosis::Nevus,
                                                       std::uint64_t base_seed = 1);

/// Shift of a given intensity t in [0, 1] used to build synthetic studies:
/// brighter, flatter, hue-rotated, noisier, with per-image lighting jitter.
ShiftSpec shift_for_intensity(double t, std::uint64_t seed);

struct StudyOptions {
  std::size_t per_group = 60;
  std::size_t source_size = 200;
  std::size_t small_group = 20;  // HAM oral/genital, meant to be excluded
  std::uint64_t seed = 7;
  std::size_t width = 64;
  std::size_t height = 64;
};

/// Complete synthetic archive: catalog spanning HAM/BCN/MSK with every
/// grouping leaf populated, images, embeddings, and classifier predictions
/// whose quality degrades with each group's injected shift intensity.
struct SyntheticStudy {
  Catalog catalog;
  std::vector<RgbImage> images;  // aligned with catalog records
  EmbeddingMatrix embeddings;
  PredictionSet predictions;
  std::map<std::string, double> intensity;  // planned group abbrev -> t
};

SyntheticStudy make_synthetic_study(const StudyOptions& options);

/// Writes catalog.csv, images/<id>.png, embeddings.csv, predictions.csv and
/// a `run` config (synthetic.conf) pointing at them; returns the config path.
std::filesystem::path write_synthetic_study(const SyntheticStudy& study, const std::filesystem::path& dir);

}  // namespace dshift
