#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "dshift/divergence.hpp"
#include "dshift/grouping.hpp"
#include "dshift/image_stats.hpp"
#include "dshift/report.hpp"
#include "dshift/tsne.hpp"

namespace dshift {

inline constexpr std::string_view kToolVersion = "0.1.0";

struct PipelineConfig {
  std::vector<std::filesystem::path> catalogs;
  std::vector<std::filesystem::path> image_roots;
  std::vector<std::filesystem::path> embeddings;
  std::optional<std::filesystem::path> predictions;
  std::optional<std::filesystem::path> localization_map;
  std::filesystem::path output_dir = "dshift-out";

  std::string source = "H";
  BootstrapConfig bootstrap;
  std::vector<std::size_t> sweep_sizes = {50, 100, 150, 200, 250};
  std::vector<std::string> sweep_targets = {"MLH", "B"};
  TsneConfig tsne;
  std::size_t min_group_size = 200;
  double train_fraction = 0.8;
  bool lesion_aware = true;
  std::size_t stats_per_class = 450;
  bool stats_exclude_outliers = true;
  std::size_t working_resolution = 224;  // 0 keeps the stored size

  bool run_stats = true;
  bool run_divergence = true;
  bool run_sweep = true;
  bool run_tsne = true;
  bool run_metrics = true;

  /// Every stochastic stage draws its seed from this one.
  std::uint64_t seed = 0;

  /// Throws Config if a referenced path does not exist.
  void validate() const;
  nlohmann::json to_json() const;
};

/// Seeds handed to the stages, all derived from PipelineConfig::seed.
struct StageSeeds {
  std::uint64_t split;
  std::uint64_t stats;
  std::uint64_t bootstrap;
  std::uint64_t tsne;
};
StageSeeds stage_seeds(std::uint64_t seed);

Catalog load_catalogs(const std::vector<std::filesystem::path>& paths);
LocalizationMap load_localization_map(const std::optional<std::filesystem::path>& path);
/// Concatenates embedding files; ids must be unique across them.
EmbeddingMatrix load_embeddings(const std::vector<std::filesystem::path>& paths);

/// Image file for an id: the first of <root>/<id>.{png,jpg,jpeg} that exists.
std::optional<std::filesystem::path> find_image(const std::vector<std::filesystem::path>& roots,
                                                const std::string& id);

struct ImageFeatures {
  std::unordered_map<std::string, PixelHistogram> histograms;
  std::unordered_map<std::string, ImageStatsRecord> stats;
};

/// Loads each image once (resized to `resolution` squared unless 0) and
/// keeps its histogram and statistics. Missing files throw MissingInput.
ImageFeatures load_image_features(const std::vector<std::string>& ids,
                                  const std::vector<std::filesystem::path>& roots,
                                  std::size_t resolution, Exec exec = Exec::Parallel);

/// Groups, the split source and the comparison targets. The first target
/// is the source holdout under the source's own name.
struct GroupingOutput {
  std::vector<GroupedDataset> kept;
  std::vector<GroupedDataset> excluded;
  GroupedDataset source;
  GroupedDataset train;
  GroupedDataset holdout;
  std::vector<GroupedDataset> targets;
  std::vector<std::string> leaked_lesions;

  /// kept groups followed by the train and holdout halves.
  std::vector<GroupedDataset> manifest() const;
};

/// Origin whose grouping leaves produce `abbrev`.
Origin resolve_source_origin(const Catalog& catalog, const std::string& abbrev);

GroupingOutput group_stage(const Catalog& catalog, const LocalizationMap& map, const PipelineConfig& cfg);

/// Rebuilds the grouping from a manifest written by group_stage.
GroupingOutput grouping_from_manifest(const std::vector<GroupedDataset>& groups, const std::string& source);

/// Per-origin datasets for the image statistics: the union of an origin's
/// kept groups, sampled down to the same size per class everywhere.
std::vector<GroupedDataset> stats_samples(const GroupingOutput& grouping, const PipelineConfig& cfg);

void stats_stage(const std::vector<GroupedDataset>& samples, const ImageFeatures& features,
                 const PipelineConfig& cfg, RunResults& results);

/// Source train half against every target (or the named ones), both
/// classes, for each metric whose inputs are available.
std::vector<DivergenceSummary> divergence_stage(const GroupingOutput& grouping,
                                                const DivergenceInputs& inputs,
                                                const PipelineConfig& cfg,
                                                const std::vector<std::string>& only_targets = {});

std::vector<DivergenceSummary> sweep_stage(const GroupingOutput& grouping, const DivergenceInputs& inputs,
                                           const PipelineConfig& cfg);

std::vector<ProjectionResult> tsne_stage(const GroupingOutput& grouping, const EmbeddingMatrix& embeddings,
                                         const PipelineConfig& cfg);

/// Performance rows for every target and class. Classifier columns are
/// filled when predictions are given; the AUROC drop is measured against
/// the source holdout.
PerformanceTable performance_stage(const GroupingOutput& grouping,
                                   const std::vector<DivergenceSummary>& divergence,
                                   const PredictionSet* predictions);

/// Correlation matrices for the classes with enough complete rows.
std::vector<CorrelationMatrix> correlation_stage(const PerformanceTable& table);

/// Runs ingest, group, stats, divergence, sweep, tsne, metrics and report,
/// writing outputs and manifest.json into cfg.output_dir. On failure the
/// manifest records the completed stages and the error, and the error is
/// rethrown.
nlohmann::json run_pipeline(const PipelineConfig& cfg);

}  // namespace dshift
