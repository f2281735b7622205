#include "dshift/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <functional>
#include <map>
#include <set>

#include <spdlog/spdlog.h>

#include "dshift/csv.hpp"
#include "dshift/error.hpp"
#include "dshift/image.hpp"
#include "dshift/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace dshift {

namespace {

constexpr Diagnosis kClasses[] = {Diagnosis::Melanoma, Diagnosis::Nevus};

json paths_json(const std::vector<fs::path>& paths) {
  json arr = json::array();
  for (const auto& p : paths) arr.push_back(p.string());
  return arr;
}

std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::vector<Origin> origins_in(const Catalog& catalog) {
  std::set<Origin> origins = {Origin::ham(), Origin::bcn(), Origin::msk()};
  for (const auto& r : catalog.records()) origins.insert(r.origin);
  return {origins.begin(), origins.end()};
}

const std::vector<GroupRule>& leaf_rules() {
  static const std::vector<GroupRule> rules = {
      {AgeCondition::Over30, LocalizationBucket::Body},
      {AgeCondition::AtMost30, std::nullopt},
      {AgeCondition::Over30, LocalizationBucket::HeadNeck},
      {AgeCondition::Over30, LocalizationBucket::PalmsSoles},
      {AgeCondition::Over30, LocalizationBucket::OralGenital},
  };
  return rules;
}

}  // namespace

void PipelineConfig::validate() const {
  auto require = [](const fs::path& p, const char* what) {
    if (!fs::exists(p)) throw Error(ErrorKind::Config, std::string(what) + " not found: " + p.string());
  };
  if (catalogs.empty()) throw Error(ErrorKind::Config, "at least one catalog is required");
  for (const auto& p : catalogs) require(p, "catalog");
  for (const auto& p : image_roots) require(p, "image root");
  for (const auto& p : embeddings) require(p, "embedding file");
  if (predictions) require(*predictions, "prediction file");
  if (localization_map) require(*localization_map, "localization map");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw Error(ErrorKind::Config, "train_fraction must lie in (0, 1)");
  }
  if (bootstrap.iterations == 0 || bootstrap.sample_size == 0) {
    throw Error(ErrorKind::Config, "bootstrap iterations and sample size must be positive");
  }
}

json PipelineConfig::to_json() const {
  json sizes = json::array();
  for (auto s : sweep_sizes) sizes.push_back(s);
  return {
      {"catalogs", paths_json(catalogs)},
      {"image_roots", paths_json(image_roots)},
      {"embeddings", paths_json(embeddings)},
      {"predictions", predictions ? json(predictions->string()) : json(nullptr)},
      {"localization_map", localization_map ? json(localization_map->string()) : json(nullptr)},
      {"output_dir", output_dir.string()},
      {"source", source},
      {"bootstrap",
       {{"iterations", bootstrap.iterations},
        {"sample_size", bootstrap.sample_size},
        {"replace", bootstrap.replace}}},
      {"sweep_sizes", sizes},
      {"sweep_targets", sweep_targets},
      {"tsne",
       {{"perplexity", tsne.perplexity},
        {"iterations", tsne.iterations},
        {"learning_rate", tsne.learning_rate},
        {"point_cap", tsne.point_cap}}},
      {"min_group_size", min_group_size},
      {"train_fraction", train_fraction},
      {"lesion_aware", lesion_aware},
      {"stats_per_class", stats_per_class},
      {"stats_exclude_outliers", stats_exclude_outliers},
      {"working_resolution", working_resolution},
      {"stages",
       {{"stats", run_stats},
        {"divergence", run_divergence},
        {"sweep", run_sweep},
        {"tsne", run_tsne},
        {"metrics", run_metrics}}},
      {"seed", seed},
  };
}

StageSeeds stage_seeds(std::uint64_t seed) {
  return {derive_seed(seed, 1), derive_seed(seed, 2), derive_seed(seed, 3), derive_seed(seed, 4)};
}

Catalog load_catalogs(const std::vector<fs::path>& paths) {
  std::vector<Catalog> parts;
  for (const auto& p : paths) parts.push_back(parse_catalog(read_text(p), p.filename().string()));
  return parts.size() == 1 ? parts.front() : merge_catalogs(parts);
}

LocalizationMap load_localization_map(const std::optional<fs::path>& path) {
  if (!path) return LocalizationMap::default_map();
  return LocalizationMap::from_csv(read_text(*path));
}

EmbeddingMatrix load_embeddings(const std::vector<fs::path>& paths) {
  if (paths.empty()) return {};
  std::vector<std::string> ids;
  std::vector<float> values;
  std::size_t dim = 0;
  for (const auto& p : paths) {
    const auto m = read_embeddings(read_text(p));
    if (ids.empty()) {
      dim = m.dim();
    } else if (m.dim() != dim) {
      throw Error(ErrorKind::DimMismatch, "embedding files disagree on dimension: " + p.string());
    }
    ids.insert(ids.end(), m.ids().begin(), m.ids().end());
    values.insert(values.end(), m.values().begin(), m.values().end());
  }
  return EmbeddingMatrix(std::move(ids), dim, std::move(values));
}

std::optional<fs::path> find_image(const std::vector<fs::path>& roots, const std::string& id) {
  for (const auto& root : roots) {
    for (const char* ext : {".png", ".jpg", ".jpeg", ".JPG", ".PNG"}) {
      fs::path p = root / (id + ext);
      if (fs::exists(p)) return p;
    }
  }
  return std::nullopt;
}

ImageFeatures load_image_features(const std::vector<std::string>& ids, const std::vector<fs::path>& roots,
                                  std::size_t resolution, Exec exec) {
  std::vector<PixelHistogram> hists(ids.size());
  std::vector<ImageStatsRecord> stats(ids.size());
  for_each_index(ids.size(), exec, [&](std::size_t i) {
    const auto path = find_image(roots, ids[i]);
    if (!path) throw Error(ErrorKind::MissingInput, "no image file for " + ids[i], {ids[i]});
    RgbImage img = read_image(*path);
    if (resolution > 0 && (img.width() != resolution || img.height() != resolution)) {
      img = resize_nearest(img, resolution, resolution);
    }
    hists[i] = histogram(img);
    stats[i] = image_stats(img);
  });
  ImageFeatures f;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    f.histograms.emplace(ids[i], hists[i]);
    f.stats.emplace(ids[i], stats[i]);
  }
  return f;
}

std::vector<GroupedDataset> GroupingOutput::manifest() const {
  std::vector<GroupedDataset> out = kept;
  out.push_back(train);
  out.push_back(holdout);
  return out;
}

Origin resolve_source_origin(const Catalog& catalog, const std::string& abbrev) {
  for (const auto& origin : origins_in(catalog)) {
    for (const auto& rule : leaf_rules()) {
      if (abbreviation(origin, rule) == abbrev) return origin;
    }
  }
  throw Error(ErrorKind::Config, "source dataset " + abbrev + " does not name a grouping leaf");
}

namespace {

GroupingOutput finish_grouping(GroupingOutput out, const std::string& source_name) {
  out.targets.clear();
  GroupedDataset reference = out.holdout;
  reference.abbrev = source_name;
  out.targets.push_back(std::move(reference));
  for (const auto& g : out.kept) {
    if (g.abbrev != source_name) out.targets.push_back(g);
  }
  return out;
}

}  // namespace

GroupingOutput group_stage(const Catalog& catalog, const LocalizationMap& map, const PipelineConfig& cfg) {
  const Origin source_origin = resolve_source_origin(catalog, cfg.source);
  auto candidates = apply_grouping(catalog, source_origin, map);
  auto exclusion = exclude_small(std::move(candidates), cfg.min_group_size);
  GroupingOutput out;
  out.kept = std::move(exclusion.kept);
  out.excluded = std::move(exclusion.removed);
  for (const auto& g : out.excluded) {
    spdlog::info("excluding {} ({} images, limit {})", g.abbrev, g.size(), cfg.min_group_size);
  }
  auto it = std::find_if(out.kept.begin(), out.kept.end(), [&](const auto& g) { return g.abbrev == cfg.source; });
  if (it == out.kept.end()) {
    throw Error(ErrorKind::EmptyInput, "source dataset " + cfg.source + " is empty or was excluded");
  }
  out.source = *it;
  SplitSpec spec;
  spec.train_fraction = cfg.train_fraction;
  spec.seed = stage_seeds(cfg.seed).split;
  spec.lesion_aware = cfg.lesion_aware;
  auto split = stratified_split(out.source, spec, catalog);
  out.train = std::move(split.train);
  out.holdout = std::move(split.holdout);
  out.leaked_lesions = leakage_guard(out.train, out.holdout, catalog);
  if (!out.leaked_lesions.empty()) {
    spdlog::warn("{} lesions appear on both sides of the {} split", out.leaked_lesions.size(), cfg.source);
  }
  return finish_grouping(std::move(out), cfg.source);
}

GroupingOutput grouping_from_manifest(const std::vector<GroupedDataset>& groups, const std::string& source) {
  GroupingOutput out;
  bool have_train = false, have_holdout = false, have_source = false;
  for (const auto& g : groups) {
    if (g.abbrev == source + "_train") {
      out.train = g;
      have_train = true;
    } else if (g.abbrev == source + "_holdout") {
      out.holdout = g;
      have_holdout = true;
    } else {
      if (g.abbrev == source) {
        out.source = g;
        have_source = true;
      }
      out.kept.push_back(g);
    }
  }
  if (!have_train || !have_holdout || !have_source) {
    throw Error(ErrorKind::MissingInput,
                "group manifest lacks " + source + ", " + source + "_train or " + source + "_holdout");
  }
  return finish_grouping(std::move(out), source);
}

std::vector<GroupedDataset> stats_samples(const GroupingOutput& grouping, const PipelineConfig& cfg) {
  std::map<Origin, GroupedDataset> by_origin;
  for (const auto& g : grouping.kept) {
    auto [it, inserted] = by_origin.try_emplace(g.origin);
    auto& u = it->second;
    if (inserted) {
      u.origin = g.origin;
      u.abbrev = abbreviation(g.origin, GroupRule{});
    }
    for (std::size_t i = 0; i < g.size(); ++i) u.add(g.member_ids[i], g.member_classes[i]);
  }
  std::size_t n = cfg.stats_per_class;
  for (const auto& [origin, g] : by_origin) {
    for (auto cls : kClasses) n = std::min(n, g.class_counts.of(cls));
  }
  std::vector<GroupedDataset> out;
  if (n == 0) {
    spdlog::warn("image statistics skipped: some origin has no images of a class");
    return out;
  }
  const auto seed = stage_seeds(cfg.seed).stats;
  for (const auto& [origin, g] : by_origin) {
    GroupedDataset sample;
    sample.abbrev = g.abbrev;
    sample.origin = origin;
    for (auto cls : kClasses) {
      for (auto& id : sample_per_class(g, cls, n, seed)) sample.add(std::move(id), cls);
    }
    out.push_back(std::move(sample));
  }
  return out;
}

void stats_stage(const std::vector<GroupedDataset>& samples, const ImageFeatures& features,
                 const PipelineConfig& cfg, RunResults& results) {
  constexpr Property kProperties[] = {Property::Brightness, Property::RmsContrast, Property::Saturation,
                                      Property::Hue, Property::Blur};
  for (const auto& g : samples) {
    for (auto cls : kClasses) {
      std::vector<ImageStatsRecord> records;
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (g.member_classes[i] != cls) continue;
        const auto& s = features.stats.at(g.member_ids[i]);
        records.push_back(s);
        results.stats.push_back({g.member_ids[i], cls, g.abbrev, s});
      }
      if (records.empty()) continue;
      for (auto p : kProperties) {
        results.boxes.push_back({g.abbrev, cls, p, summarize(records, p, cfg.stats_exclude_outliers)});
      }
    }
  }
}

namespace {

std::vector<Metric> available_metrics(const DivergenceInputs& inputs) {
  std::vector<Metric> metrics;
  if (!inputs.histograms.empty()) {
    metrics.push_back(Metric::Jsd);
  } else {
    spdlog::warn("no images: JS divergence skipped");
  }
  if (inputs.embeddings && inputs.embeddings->rows() > 0) {
    metrics.push_back(Metric::Cosine);
  } else {
    spdlog::warn("no embeddings: cosine similarity skipped");
  }
  return metrics;
}

BootstrapConfig bootstrap_config(const PipelineConfig& cfg) {
  BootstrapConfig b = cfg.bootstrap;
  b.seed = stage_seeds(cfg.seed).bootstrap;
  return b;
}

}  // namespace

std::vector<DivergenceSummary> divergence_stage(const GroupingOutput& grouping, const DivergenceInputs& inputs,
                                                const PipelineConfig& cfg,
                                                const std::vector<std::string>& only_targets) {
  const auto metrics = available_metrics(inputs);
  const auto bcfg = bootstrap_config(cfg);
  std::vector<DivergenceSummary> out;
  for (auto metric : metrics) {
    for (const auto& target : grouping.targets) {
      if (!only_targets.empty() &&
          std::find(only_targets.begin(), only_targets.end(), target.abbrev) == only_targets.end()) {
        continue;
      }
      for (auto cls : kClasses) {
        if (target.class_counts.of(cls) == 0 || grouping.train.class_counts.of(cls) == 0) {
          spdlog::warn("{} vs {}: no {} images, skipped", cfg.source, target.abbrev, to_string(cls));
          continue;
        }
        auto s = bootstrap_divergence(grouping.train, target, cls, metric, bcfg, inputs);
        s.source = cfg.source;
        s.target = target.abbrev;
        out.push_back(std::move(s));
      }
    }
  }
  return out;
}

std::vector<DivergenceSummary> sweep_stage(const GroupingOutput& grouping, const DivergenceInputs& inputs,
                                           const PipelineConfig& cfg) {
  const auto metrics = available_metrics(inputs);
  const auto bcfg = bootstrap_config(cfg);
  std::vector<DivergenceSummary> out;
  for (auto metric : metrics) {
    for (const auto& name : cfg.sweep_targets) {
      auto it = std::find_if(grouping.targets.begin(), grouping.targets.end(),
                             [&](const auto& g) { return g.abbrev == name; });
      if (it == grouping.targets.end()) {
        spdlog::warn("sweep target {} is not among the kept datasets", name);
        continue;
      }
      for (auto cls : kClasses) {
        if (it->class_counts.of(cls) == 0 || grouping.train.class_counts.of(cls) == 0) continue;
        for (auto& [size, s] : sample_size_sweep(grouping.train, *it, cls, metric, cfg.sweep_sizes, bcfg, inputs)) {
          s.source = cfg.source;
          s.target = name;
          out.push_back(std::move(s));
        }
      }
    }
  }
  return out;
}

std::vector<ProjectionResult> tsne_stage(const GroupingOutput& grouping, const EmbeddingMatrix& embeddings,
                                         const PipelineConfig& cfg) {
  std::vector<ProjectionResult> out;
  TsneConfig tcfg = cfg.tsne;
  tcfg.seed = stage_seeds(cfg.seed).tsne;
  for (auto cls : kClasses) {
    std::vector<std::string> ids;
    std::unordered_map<std::string, std::string> dataset_of;
    for (const auto& g : grouping.kept) {
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (g.member_classes[i] != cls) continue;
        if (dataset_of.emplace(g.member_ids[i], g.abbrev).second) ids.push_back(g.member_ids[i]);
      }
    }
    if (ids.size() < 4 || static_cast<double>(std::min(ids.size(), tcfg.point_cap)) <= tcfg.perplexity) {
      spdlog::warn("t-SNE for {} skipped: {} points", to_string(cls), ids.size());
      continue;
    }
    ProjectionResult p;
    p.cls = cls;
    p.projection = tsne(embeddings.select(ids), tcfg);
    for (const auto& id : p.projection.ids) p.datasets.push_back(dataset_of.at(id));
    out.push_back(std::move(p));
  }
  return out;
}

PerformanceTable performance_stage(const GroupingOutput& grouping, const std::vector<DivergenceSummary>& divergence,
                                   const PredictionSet* predictions) {
  struct Classifier {
    double auroc;
    double auroc_drop;
    double ba_drop;
  };
  std::map<std::string, Classifier> classifier;
  if (predictions) {
    const auto ref_set = predictions->subset(grouping.holdout.member_ids);
    const double ref_auroc = auroc(ref_set);
    const double ref_ba = balanced_accuracy(ref_set);
    for (const auto& t : grouping.targets) {
      const auto set = predictions->subset(t.member_ids);
      const double a = auroc(set);
      classifier[t.abbrev] = {a, performance_drop(ref_auroc, a),
                              performance_drop(ref_ba, balanced_accuracy(set))};
    }
  }
  PerformanceTable table;
  for (auto cls : kClasses) {
    for (const auto& t : grouping.targets) {
      PerformanceRow row;
      row.dataset = t.abbrev;
      row.cls = cls;
      for (const auto& s : divergence) {
        if (s.target != t.abbrev || s.cls != cls) continue;
        (s.metric == Metric::Jsd ? row.jsd_mean : row.cosine_mean) = s.mean;
      }
      if (auto it = classifier.find(t.abbrev); it != classifier.end()) {
        row.auroc = it->second.auroc;
        row.auroc_drop = it->second.auroc_drop;
        row.balanced_accuracy_drop = it->second.ba_drop;
      }
      table.rows.push_back(std::move(row));
    }
  }
  return table;
}

std::vector<CorrelationMatrix> correlation_stage(const PerformanceTable& table) {
  std::vector<CorrelationMatrix> out;
  for (auto cls : kClasses) {
    try {
      out.push_back(correlation_matrix(table, cls));
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::LengthMismatch && e.kind() != ErrorKind::ZeroVariance) throw;
      spdlog::warn("no correlation for {}: {}", to_string(cls), e.what());
    }
  }
  return out;
}

json run_pipeline(const PipelineConfig& cfg) {
  json manifest = {{"tool", "dshift"},
                   {"version", kToolVersion},
                   {"config", cfg.to_json()},
                   {"started_at", utc_now()},
                   {"stages", json::array()},
                   {"outputs", json::array()}};
  std::set<std::string> recorded;
  RunResults results;
  const fs::path& dir = cfg.output_dir;

  auto write_manifest = [&](const std::string& status) {
    manifest["status"] = status;
    manifest["finished_at"] = utc_now();
    write_text(dir / "manifest.json", manifest.dump(2) + "\n");
  };

  // Writes the report so far and attributes newly appearing files to the
  // stage. summary.json changes after every stage and is recorded last.
  auto record_outputs = [&](json& stage) {
    json files = json::array();
    for (const auto& name : emit_report(results, dir)) {
      if (name == "summary.json" || recorded.count(name)) continue;
      recorded.insert(name);
      json entry = {{"file", name}, {"sha256", sha256_file(dir / name)}};
      files.push_back(entry);
      manifest["outputs"].push_back(entry);
    }
    stage["outputs"] = files;
  };

  auto run_stage = [&](const std::string& name, bool enabled, const std::string& skip_reason,
                       const std::function<void()>& body) {
    json stage = {{"name", name}, {"started_at", utc_now()}};
    if (!enabled) {
      stage["status"] = "skipped";
      stage["reason"] = skip_reason;
      stage["outputs"] = json::array();
      manifest["stages"].push_back(stage);
      spdlog::info("stage {} skipped: {}", name, skip_reason);
      return;
    }
    spdlog::info("stage {}", name);
    try {
      body();
      record_outputs(stage);
      stage["status"] = "done";
      stage["finished_at"] = utc_now();
      manifest["stages"].push_back(stage);
    } catch (const Error& e) {
      stage["status"] = "failed";
      stage["error"] = {{"kind", to_string(e.kind())}, {"message", e.what()}};
      stage["finished_at"] = utc_now();
      manifest["stages"].push_back(stage);
      write_manifest("failed");
      throw;
    }
  };

  fs::create_directories(dir);
  cfg.validate();

  Catalog catalog;
  LocalizationMap map;
  EmbeddingMatrix embeddings;
  std::optional<PredictionSet> predictions;
  GroupingOutput grouping;
  ImageFeatures features;
  DivergenceInputs inputs;
  std::vector<GroupedDataset> samples;

  run_stage("ingest", true, "", [&] {
    catalog = load_catalogs(cfg.catalogs);
    map = load_localization_map(cfg.localization_map);
    embeddings = load_embeddings(cfg.embeddings);
    if (cfg.predictions) predictions = parse_predictions(read_text(*cfg.predictions));
    spdlog::info("{} catalog records, {} embeddings", catalog.size(), embeddings.rows());
  });

  run_stage("group", true, "", [&] {
    grouping = group_stage(catalog, map, cfg);
    results.groups = grouping.manifest();
    results.excluded = grouping.excluded;
  });

  const bool have_images = !cfg.image_roots.empty();
  const bool have_embeddings = embeddings.rows() > 0;
  const bool need_images = have_images && (cfg.run_stats || cfg.run_divergence || cfg.run_sweep);
  if (need_images) {
    std::set<std::string> ids;
    if (cfg.run_stats) {
      samples = stats_samples(grouping, cfg);
      for (const auto& g : samples) ids.insert(g.member_ids.begin(), g.member_ids.end());
    }
    if (cfg.run_divergence || cfg.run_sweep) {
      ids.insert(grouping.train.member_ids.begin(), grouping.train.member_ids.end());
      for (const auto& t : grouping.targets) ids.insert(t.member_ids.begin(), t.member_ids.end());
    }
    run_stage("load_images", true, "", [&] {
      features = load_image_features({ids.begin(), ids.end()}, cfg.image_roots, cfg.working_resolution);
    });
    inputs.histograms = std::move(features.histograms);
  }
  if (have_embeddings) inputs.embeddings = &embeddings;

  run_stage("stats", cfg.run_stats && have_images, cfg.run_stats ? "no image roots" : "disabled",
            [&] { stats_stage(samples, features, cfg, results); });
  const bool have_inputs = have_images || have_embeddings;
  run_stage("divergence", cfg.run_divergence && have_inputs,
            cfg.run_divergence ? "no images or embeddings" : "disabled",
            [&] { results.divergence = divergence_stage(grouping, inputs, cfg); });
  run_stage("sweep", cfg.run_sweep && have_inputs && !cfg.sweep_sizes.empty(),
            cfg.run_sweep ? "no inputs or sizes" : "disabled",
            [&] { results.sweep = sweep_stage(grouping, inputs, cfg); });
  run_stage("tsne", cfg.run_tsne && have_embeddings, cfg.run_tsne ? "no embeddings" : "disabled",
            [&] { results.projections = tsne_stage(grouping, embeddings, cfg); });
  run_stage("metrics", cfg.run_metrics, "disabled", [&] {
    results.performance = performance_stage(grouping, results.divergence, predictions ? &*predictions : nullptr);
    results.correlations = correlation_stage(*results.performance);
  });
  run_stage("report", true, "", [] {});
  const json summary = {{"file", "summary.json"}, {"sha256", sha256_file(dir / "summary.json")}};
  manifest["stages"].back()["outputs"].push_back(summary);
  manifest["outputs"].push_back(summary);
  write_manifest("complete");
  return manifest;
}

}  // namespace dshift
