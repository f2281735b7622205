#include "dshift/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "dshift/error.hpp"
#include "dshift/image_stats.hpp"
#include "dshift/report.hpp"
#include "dshift/rng.hpp"

namespace dshift {

namespace {

constexpr std::uint64_t kClassStream = 0x636c73u;
constexpr std::uint64_t kMetaStream = 0x6d657461u;

std::uint8_t clamp_byte(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

std::string padded(std::size_t i) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%05zu", i);
  return buf;
}

}  // namespace

RgbImage base_image(std::uint64_t base_seed, std::size_t index, Diagnosis cls, std::size_t width,
                    std::size_t height) {
  Pcg32 rng(derive_seed(base_seed, index), 1);
  const bool melanoma = cls == Diagnosis::Melanoma;

  const double skin_v = std::clamp(0.72 + 0.05 * rng.normal(), 0.58, 0.86);
  const double skin_g = 0.78 + 0.03 * rng.normal();
  const double skin_b = 0.68 + 0.04 * rng.normal();
  const double tex_freq = 0.15 + 0.1 * rng.uniform();
  const double tex_phase = 2.0 * std::numbers::pi * rng.uniform();

  const double cx = 0.5 * static_cast<double>(width) + 3.0 * rng.normal();
  const double cy = 0.5 * static_cast<double>(height) + 3.0 * rng.normal();
  const double scale = static_cast<double>(std::min(width, height)) / 64.0;
  const double rx = (11.0 + 6.0 * rng.uniform()) * scale;
  const double ry = (11.0 + 6.0 * rng.uniform()) * scale;
  const double irregularity = melanoma ? 0.12 + 0.1 * rng.uniform() : 0.03 + 0.04 * rng.uniform();
  const double lesion_v = melanoma ? 0.22 + 0.2 * rng.uniform() : 0.36 + 0.22 * rng.uniform();
  const double variegation = melanoma ? 0.12 : 0.04;
  double harmonic_phase[3];
  for (double& p : harmonic_phase) p = 2.0 * std::numbers::pi * rng.uniform();

  std::vector<std::uint8_t> px(width * height * 3);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      const double texture = 0.025 * std::sin(tex_freq * static_cast<double>(x + 2 * y) + tex_phase) +
                             0.015 * (rng.uniform() - 0.5);
      const double sv = skin_v + texture;
      double r = sv * 255.0;
      double g = r * skin_g;
      double b = r * skin_b;

      const double dx = (static_cast<double>(x) - cx) / rx;
      const double dy = (static_cast<double>(y) - cy) / ry;
      const double theta = std::atan2(dy, dx);
      double boundary = 1.0;
      for (int k = 0; k < 3; ++k) {
        boundary += irregularity / (k + 1) * std::sin((k + 2) * theta + harmonic_phase[k]);
      }
      const double radius = std::sqrt(dx * dx + dy * dy);
      // Smooth edge over roughly two pixels.
      const double inside = std::clamp((boundary - radius) * 0.5 * std::min(rx, ry) / 2.0 + 0.5, 0.0, 1.0);
      if (inside > 0.0) {
        const double patch = variegation * std::sin(0.7 * static_cast<double>(x) + harmonic_phase[0]) *
                             std::cos(0.6 * static_cast<double>(y) + harmonic_phase[1]);
        const double lv = std::clamp(lesion_v + patch + 0.02 * (rng.uniform() - 0.5), 0.05, 0.95);
        const double lr = lv * 255.0;
        const double lg = lr * 0.66;
        const double lb = lr * 0.52;
        r = inside * lr + (1.0 - inside) * r;
        g = inside * lg + (1.0 - inside) * g;
        b = inside * lb + (1.0 - inside) * b;
      }
      const std::size_t o = (y * width + x) * 3;
      px[o] = clamp_byte(r);
      px[o + 1] = clamp_byte(g);
      px[o + 2] = clamp_byte(b);
    }
  }
  return RgbImage(width, height, std::move(px));
}

RgbImage apply_shift(const RgbImage& img, const ShiftSpec& shift, std::size_t index) {
  if (shift.is_identity()) return img;
  if (!(shift.contrast_scale > 0.0)) throw Error(ErrorKind::InvalidArgument, "contrast_scale must be positive");
  if (shift.noise_sigma < 0.0 || shift.illumination_jitter < 0.0) {
    throw Error(ErrorKind::InvalidArgument, "noise and jitter must be non-negative");
  }
  Pcg32 rng(derive_seed(shift.seed, index), 2);
  const double jitter = shift.illumination_jitter > 0.0 ? shift.illumination_jitter * rng.normal() : 0.0;
  const double offset = 255.0 * (shift.brightness_offset + jitter);

  RgbImage out = img;
  auto px = out.data();
  for (std::size_t i = 0; i < out.pixel_count(); ++i) {
    double c[3] = {static_cast<double>(px[3 * i]), static_cast<double>(px[3 * i + 1]),
                   static_cast<double>(px[3 * i + 2])};
    if (shift.hue_rotation != 0.0) {
      const double mx = std::max({c[0], c[1], c[2]});
      const double mn = std::min({c[0], c[1], c[2]});
      const double chroma = mx - mn;
      if (chroma > 0.0) {
        double h;
        if (mx == c[0]) {
          h = 60.0 * (c[1] - c[2]) / chroma;
        } else if (mx == c[1]) {
          h = 60.0 * (2.0 + (c[2] - c[0]) / chroma);
        } else {
          h = 60.0 * (4.0 + (c[0] - c[1]) / chroma);
        }
        h = std::fmod(h + shift.hue_rotation, 360.0);
        if (h < 0.0) h += 360.0;
        const double hp = h / 60.0;
        const double xcomp = chroma * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
        double r1 = 0, g1 = 0, b1 = 0;
        switch (static_cast<int>(hp) % 6) {
          case 0: r1 = chroma; g1 = xcomp; break;
          case 1: r1 = xcomp; g1 = chroma; break;
          case 2: g1 = chroma; b1 = xcomp; break;
          case 3: g1 = xcomp; b1 = chroma; break;
          case 4: r1 = xcomp; b1 = chroma; break;
          default: r1 = chroma; b1 = xcomp; break;
        }
        c[0] = r1 + mn;
        c[1] = g1 + mn;
        c[2] = b1 + mn;
      }
    }
    for (double& v : c) {
      if (shift.contrast_scale != 1.0) v = 127.5 + (v - 127.5) * shift.contrast_scale;
      v += offset;
      if (shift.noise_sigma > 0.0) v += 255.0 * shift.noise_sigma * rng.normal();
    }
    px[3 * i] = clamp_byte(c[0]);
    px[3 * i + 1] = clamp_byte(c[1]);
    px[3 * i + 2] = clamp_byte(c[2]);
  }
  return out;
}

SynthCorpus gen_corpus(std::size_t n, std::uint64_t base_seed, const ShiftSpec& shift,
                       const CorpusLayout& layout) {
  if (n < 1) throw Error(ErrorKind::InvalidArgument, "corpus size must be at least 1");
  if (!(shift.brightness_offset >= -0.5 && shift.brightness_offset <= 0.5)) {
    throw Error(ErrorKind::InvalidArgument, "brightness_offset must lie in [-0.5, 0.5]");
  }
  SynthCorpus corpus;
  corpus.applied = shift;
  corpus.images.reserve(n);
  std::vector<MetadataRecord> records;
  records.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    // Every tenth image is a second view of the previous lesion and shares
    // its diagnosis.
    const std::size_t lesion = (layout.lesion_ids && i % 10 == 9) ? i - 1 : i;
    Pcg32 cls_rng(derive_seed(base_seed, lesion), kClassStream);
    const Diagnosis cls = cls_rng.uniform() < layout.melanoma_fraction ? Diagnosis::Melanoma : Diagnosis::Nevus;
    corpus.images.push_back(apply_shift(base_image(base_seed, i, cls, layout.width, layout.height), shift, i));

    Pcg32 meta(derive_seed(base_seed, i), kMetaStream);
    MetadataRecord r;
    r.image_id = layout.id_prefix + "_" + padded(i);
    if (layout.lesion_ids) {
      r.lesion_id = layout.id_prefix + "_L" + padded(lesion);
    }
    r.diagnosis = cls;
    r.age_years = layout.age_min +
                  static_cast<int>(meta.below(static_cast<std::uint32_t>(layout.age_max - layout.age_min + 1)));
    r.localization_raw = layout.localizations[meta.below(static_cast<std::uint32_t>(layout.localizations.size()))];
    r.origin = layout.origin;
    r.sex = meta.below(2) ? Sex::Male : Sex::Female;
    records.push_back(std::move(r));
  }
  corpus.catalog = Catalog(layout.id_prefix, std::move(records));
  return corpus;
}

GroupedDataset corpus_group(const SynthCorpus& corpus, std::string abbrev) {
  GroupedDataset g;
  g.abbrev = std::move(abbrev);
  if (!corpus.catalog.empty()) g.origin = corpus.catalog.records().front().origin;
  for (const auto& r : corpus.catalog.records()) {
    if (r.diagnosis != Diagnosis::Other) g.add(r.image_id, r.diagnosis);
  }
  return g;
}

std::vector<float> synthetic_embedding(const RgbImage& img, std::uint64_t noise_seed, std::size_t index,
                                       std::size_t noise_dims, double noise_sigma) {
  const auto s = image_stats(img);
  const double rad = s.hue * std::numbers::pi / 180.0;
  std::vector<float> v = {
      static_cast<float>(s.brightness),
      static_cast<float>(2.0 * s.rms_contrast),
      static_cast<float>(s.saturation),
      static_cast<float>(0.5 + 0.5 * std::cos(rad)),
      static_cast<float>(0.5 + 0.5 * std::sin(rad)),
      static_cast<float>(std::sqrt(s.blur)),
  };
  Pcg32 rng(derive_seed(noise_seed, index), 3);
  for (std::size_t k = 0; k < noise_dims; ++k) v.push_back(static_cast<float>(noise_sigma * rng.normal()));
  return v;
}

EmbeddingMatrix embed_corpus(const SynthCorpus& corpus, std::uint64_t noise_seed, std::size_t noise_dims,
                             double noise_sigma) {
  std::vector<std::string> ids;
  std::vector<float> values;
  for (std::size_t i = 0; i < corpus.images.size(); ++i) {
    ids.push_back(corpus.catalog.records()[i].image_id);
    const auto row = synthetic_embedding(corpus.images[i], noise_seed, i, noise_dims, noise_sigma);
    values.insert(values.end(), row.begin(), row.end());
  }
  return EmbeddingMatrix(std::move(ids), kSyntheticStatDims + noise_dims, std::move(values));
}

double lesion_darkness(const RgbImage& img) {
  const double cx = 0.5 * static_cast<double>(img.width());
  const double cy = 0.5 * static_cast<double>(img.height());
  const double r = 0.125 * static_cast<double>(std::min(img.width(), img.height()));
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t y = 0; y < img.height(); ++y) {
    for (std::size_t x = 0; x < img.width(); ++x) {
      const double dx = static_cast<double>(x) + 0.5 - cx;
      const double dy = static_cast<double>(y) + 0.5 - cy;
      if (dx * dx + dy * dy > r * r) continue;
      sum += std::max({img.at(x, y, 0), img.at(x, y, 1), img.at(x, y, 2)}) / 255.0;
      ++count;
    }
  }
  return count ? 1.0 - sum / static_cast<double>(count) : 0.0;
}

DarknessClassifier DarknessClassifier::fit(const std::vector<RgbImage>& images,
                                           const std::vector<Diagnosis>& labels) {
  double mel = 0.0, nev = 0.0;
  std::size_t n_mel = 0, n_nev = 0;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const double d = lesion_darkness(images[i]);
    if (labels[i] == Diagnosis::Melanoma) {
      mel += d;
      ++n_mel;
    } else if (labels[i] == Diagnosis::Nevus) {
      nev += d;
      ++n_nev;
    }
  }
  if (n_mel == 0 || n_nev == 0) throw Error(ErrorKind::SingleClass, "classifier fit needs both classes");
  DarknessClassifier c;
  c.midpoint = 0.5 * (mel / static_cast<double>(n_mel) + nev / static_cast<double>(n_nev));
  return c;
}

double DarknessClassifier::score(const RgbImage& img) const {
  return 1.0 / (1.0 + std::exp(-(lesion_darkness(img) - midpoint) / scale));
}

std::vector<DivergenceSummary> monotonicity_experiment(Metric metric, const std::vector<double>& deltas,
                                                       std::size_t n, const BootstrapConfig& cfg,
                                                       Diagnosis cls, std::uint64_t base_seed) {
  if (deltas.empty() || !std::is_sorted(deltas.begin(), deltas.end()) ||
      std::find(deltas.begin(), deltas.end(), 0.0) == deltas.end()) {
    throw Error(ErrorKind::InvalidArgument, "deltas must be ascending and include 0");
  }
  CorpusLayout base_layout;
  base_layout.id_prefix = "base";
  const auto base = gen_corpus(n, base_seed, ShiftSpec{}, base_layout);
  const auto base_group = corpus_group(base, "base");
  const std::uint64_t noise_seed = derive_seed(base_seed, 0x656d62u);

  DivergenceInputs base_inputs;
  if (metric == Metric::Jsd) {
    for (std::size_t i = 0; i < n; ++i) {
      base_inputs.histograms.emplace(base.catalog.records()[i].image_id, histogram(base.images[i]));
    }
  }
  const auto base_emb = metric == Metric::Cosine ? embed_corpus(base, noise_seed) : EmbeddingMatrix{};

  std::vector<DivergenceSummary> out;
  for (double delta : deltas) {
    CorpusLayout layout;
    layout.id_prefix = "shift";
    ShiftSpec shift;
    shift.brightness_offset = delta;
    const auto shifted = gen_corpus(n, base_seed, shift, layout);
    auto target = corpus_group(shifted, "shift");
    target.abbrev = "delta=" + std::to_string(delta);

    DivergenceInputs inputs = base_inputs;
    EmbeddingMatrix combined;
    if (metric == Metric::Jsd) {
      for (std::size_t i = 0; i < n; ++i) {
        inputs.histograms.emplace(shifted.catalog.records()[i].image_id, histogram(shifted.images[i]));
      }
    } else {
      const auto emb = embed_corpus(shifted, noise_seed);
      std::vector<std::string> ids = base_emb.ids();
      ids.insert(ids.end(), emb.ids().begin(), emb.ids().end());
      std::vector<float> values = base_emb.values();
      values.insert(values.end(), emb.values().begin(), emb.values().end());
      combined = EmbeddingMatrix(std::move(ids), base_emb.dim(), std::move(values));
      inputs.embeddings = &combined;
    }
    out.push_back(bootstrap_divergence(base_group, target, cls, metric, cfg, inputs));
  }
  return out;
}

ShiftSpec shift_for_intensity(double t, std::uint64_t seed) {
  ShiftSpec s;
  s.brightness_offset = 0.25 * t;
  s.contrast_scale = 1.0 - 0.3 * t;
  s.hue_rotation = 12.0 * t;
  s.noise_sigma = 0.01 + 0.03 * t;
  s.illumination_jitter = 0.12 * t;
  s.seed = seed;
  return s;
}

namespace {

struct PlannedGroup {
  std::string abbrev;
  Origin origin;
  int age_min;
  int age_max;
  std::vector<std::string> localizations;
  double intensity;
  double melanoma_fraction;
};

}  // namespace

SyntheticStudy make_synthetic_study(const StudyOptions& options) {
  const std::vector<std::string> body = {"anterior torso", "posterior torso", "upper extremity",
                                         "lower extremity"};
  const std::vector<std::string> any = {"anterior torso", "upper extremity", "head/neck",
                                        "palms/soles", "lower extremity"};
  const std::vector<PlannedGroup> plan = {
      {"H", Origin::ham(), 35, 85, body, 0.0, 0.3},
      {"HA", Origin::ham(), 5, 30, any, 0.15, 0.2},
      {"HLH", Origin::ham(), 35, 85, {"head/neck"}, 0.25, 0.45},
      {"HLP", Origin::ham(), 35, 85, {"palms/soles"}, 0.35, 0.15},
      {"HLO", Origin::ham(), 35, 85, {"oral/genital"}, 0.3, 0.5},
      {"M", Origin::msk(), 35, 85, body, 0.45, 0.3},
      {"MA", Origin::msk(), 5, 30, any, 0.5, 0.2},
      {"MLH", Origin::msk(), 35, 85, {"head/neck"}, 0.55, 0.5},
      {"B", Origin::bcn(), 35, 85, body, 0.6, 0.4},
      {"BA", Origin::bcn(), 5, 30, any, 0.7, 0.2},
      {"BLH", Origin::bcn(), 35, 85, {"head/neck"}, 0.8, 0.6},
      {"BLP", Origin::bcn(), 35, 85, {"palms/soles"}, 0.9, 0.6},
  };

  SyntheticStudy study;
  std::vector<MetadataRecord> records;
  std::vector<float> emb_values;
  std::vector<std::string> emb_ids;
  const std::uint64_t noise_seed = derive_seed(options.seed, 0x656d62u);
  std::size_t source_count = 0;

  for (std::size_t g = 0; g < plan.size(); ++g) {
    const auto& p = plan[g];
    const std::size_t n = p.abbrev == "H" ? options.source_size
                          : p.abbrev == "HLO" ? options.small_group
                                              : options.per_group;
    CorpusLayout layout;
    layout.id_prefix = "syn_" + p.abbrev;
    layout.origin = p.origin;
    layout.age_min = p.age_min;
    layout.age_max = p.age_max;
    layout.localizations = p.localizations;
    layout.melanoma_fraction = p.melanoma_fraction;
    layout.lesion_ids = p.origin == Origin::ham();
    layout.width = options.width;
    layout.height = options.height;
    const auto corpus = gen_corpus(n, derive_seed(options.seed, g), shift_for_intensity(p.intensity, derive_seed(options.seed, g, 1)), layout);
    study.intensity[p.abbrev] = p.intensity;
    if (p.abbrev == "H") source_count = n;
    for (std::size_t i = 0; i < n; ++i) {
      records.push_back(corpus.catalog.records()[i]);
      study.images.push_back(corpus.images[i]);
      const auto row = synthetic_embedding(corpus.images[i], noise_seed, records.size() - 1);
      emb_values.insert(emb_values.end(), row.begin(), row.end());
      emb_ids.push_back(corpus.catalog.records()[i].image_id);
    }
  }

  // Records that the grouping must ignore: another diagnosis, unknown age,
  // and an unmapped localization.
  {
    CorpusLayout layout;
    layout.id_prefix = "syn_misc";
    layout.width = options.width;
    layout.height = options.height;
    const auto extra = gen_corpus(3, derive_seed(options.seed, 99), ShiftSpec{}, layout);
    for (std::size_t i = 0; i < 3; ++i) {
      auto r = extra.catalog.records()[i];
      if (i == 0) r.diagnosis = Diagnosis::Other;
      if (i == 1) r.age_years.reset();
      if (i == 2) r.localization_raw = "unrecorded site";
      records.push_back(r);
      study.images.push_back(extra.images[i]);
      const auto row = synthetic_embedding(extra.images[i], noise_seed, records.size() - 1);
      emb_values.insert(emb_values.end(), row.begin(), row.end());
      emb_ids.push_back(r.image_id);
    }
  }

  // The classifier sees the first 80% of the source images only.
  const std::size_t fit_count = source_count * 4 / 5;
  std::vector<RgbImage> fit_images(study.images.begin(), study.images.begin() + static_cast<std::ptrdiff_t>(fit_count));
  std::vector<Diagnosis> fit_labels;
  for (std::size_t i = 0; i < fit_count; ++i) fit_labels.push_back(records[i].diagnosis);
  const auto clf = DarknessClassifier::fit(fit_images, fit_labels);
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].diagnosis == Diagnosis::Other) continue;
    study.predictions.entries.push_back(
        {records[i].image_id, clf.score(study.images[i]), records[i].diagnosis == Diagnosis::Melanoma ? 1 : 0});
  }

  study.catalog = Catalog("synthetic", std::move(records));
  study.embeddings = EmbeddingMatrix(std::move(emb_ids), kSyntheticStatDims + 10, std::move(emb_values));
  return study;
}

std::filesystem::path write_synthetic_study(const SyntheticStudy& study, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  const fs::path root = fs::absolute(dir);
  fs::create_directories(root / "images");
  write_text(root / "catalog.csv", serialize_catalog(study.catalog));
  for (std::size_t i = 0; i < study.images.size(); ++i) {
    write_png(study.images[i], root / "images" / (study.catalog.records()[i].image_id + ".png"));
  }
  write_text(root / "embeddings.csv", write_embeddings(study.embeddings));
  write_text(root / "predictions.csv", write_predictions(study.predictions));
  const fs::path conf = root / "synthetic.conf";
  write_text(conf, "# Generated by `dshift synth`; groups are small, so the size limit is lowered.\n"
                   "catalog = \"" + (root / "catalog.csv").string() + "\"\n"
                   "images = \"" + (root / "images").string() + "\"\n"
                   "embeddings = \"" + (root / "embeddings.csv").string() + "\"\n"
                   "predictions = \"" + (root / "predictions.csv").string() + "\"\n"
                   "min-group-size = 40\n"
                   "resolution = 0\n"
                   "sweep-sizes = [25, 50, 100, 150, 250]\n"
                   "tsne-iterations = 500\n");
  return conf;
}

}  // namespace dshift
