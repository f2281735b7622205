// dshift command-line entry point.

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>
#include <omp.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "dshift/error.hpp"
#include "dshift/fetch.hpp"
#include "dshift/pipeline.hpp"
#include "dshift/report.hpp"
#include "dshift/synth.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace dshift;

namespace {

struct Options {
  PipelineConfig cfg;
  std::optional<fs::path> groups;
  std::optional<fs::path> config;
  std::vector<std::string> targets;
  std::string metric = "both";
  bool no_lesion_aware = false;
  bool keep_outliers = false;
  bool no_replace = false;
  bool skip_stats = false, skip_divergence = false, skip_sweep = false, skip_tsne = false, skip_metrics = false;

  void finish() {
    cfg.lesion_aware = !no_lesion_aware;
    cfg.stats_exclude_outliers = !keep_outliers;
    cfg.bootstrap.replace = !no_replace;
    cfg.run_stats = !skip_stats;
    cfg.run_divergence = !skip_divergence;
    cfg.run_sweep = !skip_sweep;
    cfg.run_tsne = !skip_tsne;
    cfg.run_metrics = !skip_metrics;
  }
};

void add_inputs(CLI::App* app, Options& o) {
  app->add_option("--catalog", o.cfg.catalogs, "Catalog CSV files")->check(CLI::ExistingFile);
  app->add_option("--loc-map", o.cfg.localization_map, "Localization map CSV (raw,bucket)")->check(CLI::ExistingFile);
}

void add_grouping(CLI::App* app, Options& o) {
  app->add_option("--source", o.cfg.source, "Source dataset abbreviation")->capture_default_str();
  app->add_option("--min-group-size", o.cfg.min_group_size, "Groups of at most this size are excluded")
      ->capture_default_str();
  app->add_option("--train-fraction", o.cfg.train_fraction, "Train share of the source split")
      ->capture_default_str();
  app->add_flag("--no-lesion-aware", o.no_lesion_aware, "Split by image instead of by lesion");
}

void add_images(CLI::App* app, Options& o) {
  app->add_option("--images", o.cfg.image_roots, "Directories holding <image_id>.png/.jpg")->check(CLI::ExistingDirectory);
  app->add_option("--resolution", o.cfg.working_resolution, "Working resolution, 0 keeps stored size")
      ->capture_default_str();
}

void add_bootstrap(CLI::App* app, Options& o) {
  app->add_option("--iterations", o.cfg.bootstrap.iterations, "Bootstrap iterations")->capture_default_str();
  app->add_option("--sample-size", o.cfg.bootstrap.sample_size, "Bootstrap sample size")->capture_default_str();
  app->add_flag("--no-replace", o.no_replace, "Sample without replacement");
}

void add_tsne(CLI::App* app, Options& o) {
  app->add_option("--perplexity", o.cfg.tsne.perplexity)->capture_default_str();
  app->add_option("--tsne-iterations", o.cfg.tsne.iterations)->capture_default_str();
  app->add_option("--learning-rate", o.cfg.tsne.learning_rate)->capture_default_str();
  app->add_option("--point-cap", o.cfg.tsne.point_cap)->capture_default_str();
}

void add_stats(CLI::App* app, Options& o) {
  app->add_option("--stats-per-class", o.cfg.stats_per_class, "Images per class and origin")
      ->capture_default_str();
  app->add_flag("--keep-outliers", o.keep_outliers, "Box minimum and maximum include outliers");
}

void add_common(CLI::App* app, Options& o) {
  app->add_option("--seed", o.cfg.seed, "Master seed")->capture_default_str();
  app->add_option("-o,--out", o.cfg.output_dir, "Output directory")->capture_default_str();
  app->add_option("--config", o.config, "Flat key = value config file; flags override it")
      ->check(CLI::ExistingFile);
}

/// CLI11 reads config files for the root command only, so subcommand
/// files are parsed with its TOML/INI reader and applied to every option
/// the command line left unset.
void apply_config(CLI::App* app, const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Config, "cannot read config " + path.string());
  for (const auto& item : CLI::ConfigTOML().from_config(in)) {
    if (item.name == "++" || item.name == "--") continue;
    if (!item.parents.empty()) {
      throw Error(ErrorKind::Config, "config must be flat, found section key " + item.fullname());
    }
    std::string name = item.name;
    std::replace(name.begin(), name.end(), '_', '-');
    CLI::Option* opt = app->get_option_no_throw("--" + name);
    if (!opt || name == "config") throw Error(ErrorKind::Config, "unknown config key " + item.name);
    if (opt->count() > 0) continue;
    opt->add_result(item.inputs);
    opt->run_callback();
  }
}

void add_from_groups(CLI::App* app, Options& o) {
  app->add_option("--groups", o.groups, "groups.json written by `dshift group`")->required()->check(CLI::ExistingFile);
  app->add_option("--source", o.cfg.source, "Source dataset abbreviation")->capture_default_str();
}

GroupingOutput load_grouping(const Options& o) {
  json j;
  try {
    j = json::parse(read_text(*o.groups));
  } catch (const json::exception& e) {
    throw Error(ErrorKind::MalformedJson, o.groups->string() + ": " + e.what());
  }
  return grouping_from_manifest(groups_from_json(j), o.cfg.source);
}

std::vector<std::string> member_ids(const GroupingOutput& g) {
  std::set<std::string> ids(g.train.member_ids.begin(), g.train.member_ids.end());
  for (const auto& t : g.targets) ids.insert(t.member_ids.begin(), t.member_ids.end());
  return {ids.begin(), ids.end()};
}

void print_written(const std::vector<std::string>& files, const fs::path& dir) {
  for (const auto& f : files) std::cout << (dir / f).string() << "\n";
}

int cmd_fetch(const std::string& endpoint, const std::vector<std::string>& filters, const fs::path& cache_dir,
              const fs::path& out, const std::optional<fs::path>& images, const std::optional<fs::path>& snapshot,
              const std::optional<fs::path>& mapping, std::size_t attempts, long delay_ms, bool offline,
              std::size_t concurrency) {
  FetchConfig cfg;
  cfg.endpoint = endpoint;
  for (const auto& f : filters) {
    const auto eq = f.find('=');
    if (eq == std::string::npos) throw Error(ErrorKind::Config, "filter must be key=value: " + f);
    cfg.filter[f.substr(0, eq)] = f.substr(eq + 1);
  }
  cfg.cache_dir = cache_dir;
  cfg.max_attempts = attempts;
  cfg.base_delay = std::chrono::milliseconds(delay_ms);
  cfg.offline = offline;
  if (mapping) cfg.mapping = FieldMapping::from_json(json::parse(read_text(*mapping)));
  auto result = fetch_catalog(cfg);
  spdlog::info("{} records ({} pages downloaded, {} from cache)", result.catalog.size(), result.pages_downloaded,
               result.pages_from_cache);
  if (snapshot) {
    const auto missing = pin_to_snapshot(result, json::parse(read_text(*snapshot)));
    if (!missing.empty()) spdlog::warn("{} pinned ids are no longer in the archive", missing.size());
  }
  write_text(out, serialize_catalog(result.catalog));
  std::cout << out.string() << "\n";
  if (images) {
    const auto d = download_images(result.image_urls, *images, cfg, concurrency);
    spdlog::info("{} images downloaded, {} already present", d.downloaded, d.skipped);
  }
  return 0;
}

int cmd_group(Options& o) {
  o.finish();
  if (o.cfg.catalogs.empty()) throw Error(ErrorKind::Config, "--catalog is required");
  const auto catalog = load_catalogs(o.cfg.catalogs);
  const auto grouping = group_stage(catalog, load_localization_map(o.cfg.localization_map), o.cfg);
  RunResults r;
  r.groups = grouping.manifest();
  r.excluded = grouping.excluded;
  print_written(emit_report(r, o.cfg.output_dir), o.cfg.output_dir);
  for (const auto& d : compare_with_reference(grouping.kept)) {
    if (!d.observed || *d.observed != d.expected) {
      spdlog::info("{}: {} melanoma / {} nevus, reference {} / {}", d.abbrev,
                   d.observed ? d.observed->melanoma : 0, d.observed ? d.observed->nevus : 0, d.expected.melanoma,
                   d.expected.nevus);
    }
  }
  return 0;
}

int cmd_stats(Options& o) {
  o.finish();
  if (o.cfg.image_roots.empty()) throw Error(ErrorKind::Config, "--images is required");
  const auto grouping = load_grouping(o);
  const auto samples = stats_samples(grouping, o.cfg);
  std::set<std::string> ids;
  for (const auto& g : samples) ids.insert(g.member_ids.begin(), g.member_ids.end());
  const auto features = load_image_features({ids.begin(), ids.end()}, o.cfg.image_roots, o.cfg.working_resolution);
  RunResults r;
  stats_stage(samples, features, o.cfg, r);
  print_written(emit_report(r, o.cfg.output_dir), o.cfg.output_dir);
  return 0;
}

DivergenceInputs divergence_inputs(const Options& o, const GroupingOutput& grouping, EmbeddingMatrix& embeddings) {
  if (o.metric != "jsd" && o.metric != "cosine" && o.metric != "both") {
    throw Error(ErrorKind::Config, "--metric must be jsd, cosine or both");
  }
  DivergenceInputs inputs;
  if (o.metric != "cosine" && !o.cfg.image_roots.empty()) {
    inputs.histograms =
        load_image_features(member_ids(grouping), o.cfg.image_roots, o.cfg.working_resolution).histograms;
  }
  if (o.metric != "jsd" && !o.cfg.embeddings.empty()) {
    embeddings = load_embeddings(o.cfg.embeddings);
    inputs.embeddings = &embeddings;
  }
  if (inputs.histograms.empty() && !inputs.embeddings) {
    throw Error(ErrorKind::Config, "need --images (jsd) or --embeddings (cosine)");
  }
  return inputs;
}

int cmd_divergence(Options& o) {
  o.finish();
  const auto grouping = load_grouping(o);
  EmbeddingMatrix embeddings;
  const auto inputs = divergence_inputs(o, grouping, embeddings);
  RunResults r;
  r.divergence = divergence_stage(grouping, inputs, o.cfg, o.targets);
  print_written(emit_report(r, o.cfg.output_dir), o.cfg.output_dir);
  return 0;
}

int cmd_sweep(Options& o) {
  o.finish();
  const auto grouping = load_grouping(o);
  EmbeddingMatrix embeddings;
  const auto inputs = divergence_inputs(o, grouping, embeddings);
  RunResults r;
  r.sweep = sweep_stage(grouping, inputs, o.cfg);
  print_written(emit_report(r, o.cfg.output_dir), o.cfg.output_dir);
  return 0;
}

int cmd_tsne(Options& o) {
  o.finish();
  if (o.cfg.embeddings.empty()) throw Error(ErrorKind::Config, "--embeddings is required");
  const auto grouping = load_grouping(o);
  RunResults r;
  r.projections = tsne_stage(grouping, load_embeddings(o.cfg.embeddings), o.cfg);
  print_written(emit_report(r, o.cfg.output_dir), o.cfg.output_dir);
  return 0;
}

int cmd_metrics(const fs::path& predictions, const std::optional<fs::path>& groups_path,
                const std::vector<std::string>& datasets, double threshold, const std::optional<fs::path>& out) {
  const auto preds = parse_predictions(read_text(predictions));
  json report = json::object();
  auto evaluate = [&](const PredictionSet& set) {
    return json{{"n", set.entries.size()}, {"auroc", auroc(set)}, {"balanced_accuracy", balanced_accuracy(set, threshold)}};
  };
  if (groups_path) {
    const auto groups = groups_from_json(json::parse(read_text(*groups_path)));
    for (const auto& g : groups) {
      if (!datasets.empty() && std::find(datasets.begin(), datasets.end(), g.abbrev) == datasets.end()) continue;
      report[g.abbrev] = evaluate(preds.subset(g.member_ids));
    }
  } else {
    report["all"] = evaluate(preds);
  }
  const std::string text = report.dump(2) + "\n";
  if (out) {
    write_text(*out, text);
    std::cout << out->string() << "\n";
  } else {
    std::cout << text;
  }
  return 0;
}

int cmd_correlate(const fs::path& performance, const fs::path& out) {
  const auto table = parse_performance(read_text(performance));
  const auto matrices = correlation_stage(table);
  if (matrices.empty()) throw Error(ErrorKind::LengthMismatch, "no class has two complete rows to correlate");
  write_text(out, correlation_report(matrices).dump(2) + "\n");
  std::cout << out.string() << "\n";
  return 0;
}

int cmd_synth(const StudyOptions& opts, const fs::path& out) {
  const auto study = make_synthetic_study(opts);
  const auto conf = write_synthetic_study(study, out);
  spdlog::info("{} records written to {}", study.catalog.size(), out.string());
  std::cout << conf.string() << "\n";
  return 0;
}

int cmd_run(Options& o) {
  o.finish();
  const auto manifest = run_pipeline(o.cfg);
  std::cout << (o.cfg.output_dir / "manifest.json").string() << "\n";
  return manifest.value("status", "") == "complete" ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  auto logger = spdlog::stderr_color_mt("dshift");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%l] %v");

  CLI::App app{"Dataset grouping and domain-shift quantification for dermoscopy catalogs"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kToolVersion));
  bool verbose = false, quiet = false;
  int threads = 0;
  app.add_flag("-v,--verbose", verbose, "Debug logging");
  app.add_flag("-q,--quiet", quiet, "Warnings and errors only");
  app.add_option("--threads", threads, "OpenMP threads (0 = runtime default)");

  Options o;

  // fetch
  std::string endpoint;
  std::vector<std::string> filters;
  const char* env_cache = std::getenv("DSHIFT_CACHE_DIR");
  const char* home = std::getenv("HOME");
  fs::path cache_dir = env_cache ? fs::path(env_cache) : fs::path(home ? home : ".") / ".cache" / "dshift";
  fs::path fetch_out = "catalog.csv";
  std::optional<fs::path> fetch_images, snapshot, mapping;
  std::size_t attempts = 5, concurrency = 4;
  long delay_ms = 500;
  bool offline = false;
  auto* fetch = app.add_subcommand("fetch", "Download the archive catalog (and optionally images)");
  fetch->add_option("--endpoint", endpoint, "First page URL of the image listing")->required();
  fetch->add_option("--filter", filters, "Query filter key=value, repeatable");
  fetch->add_option("--cache-dir", cache_dir, "Page cache (env DSHIFT_CACHE_DIR)")->capture_default_str();
  fetch->add_option("-o,--out", fetch_out, "Catalog CSV to write")->capture_default_str();
  fetch->add_option("--images", fetch_images, "Also download image files into this directory");
  fetch->add_option("--snapshot", snapshot, "Group manifest whose ids pin the catalog")->check(CLI::ExistingFile);
  fetch->add_option("--mapping", mapping, "JSON field mapping override")->check(CLI::ExistingFile);
  fetch->add_option("--attempts", attempts, "Attempts per request")->capture_default_str();
  fetch->add_option("--retry-delay-ms", delay_ms, "Initial backoff delay")->capture_default_str();
  fetch->add_option("--concurrency", concurrency, "Parallel image downloads")->capture_default_str();
  fetch->add_flag("--offline", offline, "Serve from cache only");

  auto* group = app.add_subcommand("group", "Build the grouped datasets and the source split");
  add_inputs(group, o);
  add_grouping(group, o);
  add_common(group, o);

  auto* stats = app.add_subcommand("stats", "Image property statistics per origin");
  add_from_groups(stats, o);
  add_images(stats, o);
  add_stats(stats, o);
  add_common(stats, o);

  auto* divergence = app.add_subcommand("divergence", "Bootstrap divergence between source and targets");
  add_from_groups(divergence, o);
  add_images(divergence, o);
  divergence->add_option("--embeddings", o.cfg.embeddings, "Embedding CSV files")->check(CLI::ExistingFile);
  divergence->add_option("--target", o.targets, "Restrict to these targets");
  divergence->add_option("--metric", o.metric, "jsd, cosine or both")->capture_default_str();
  add_bootstrap(divergence, o);
  add_common(divergence, o);

  auto* sweep = app.add_subcommand("sweep", "Divergence as a function of the bootstrap sample size");
  add_from_groups(sweep, o);
  add_images(sweep, o);
  sweep->add_option("--embeddings", o.cfg.embeddings, "Embedding CSV files")->check(CLI::ExistingFile);
  sweep->add_option("--metric", o.metric, "jsd, cosine or both")->capture_default_str();
  sweep->add_option("--sweep-sizes", o.cfg.sweep_sizes)->capture_default_str();
  sweep->add_option("--sweep-targets", o.cfg.sweep_targets)->capture_default_str();
  add_bootstrap(sweep, o);
  add_common(sweep, o);

  auto* tsne_cmd = app.add_subcommand("tsne", "2-D t-SNE projections per class");
  add_from_groups(tsne_cmd, o);
  tsne_cmd->add_option("--embeddings", o.cfg.embeddings, "Embedding CSV files")->check(CLI::ExistingFile);
  add_tsne(tsne_cmd, o);
  add_common(tsne_cmd, o);

  fs::path predictions;
  std::optional<fs::path> metrics_groups, metrics_out;
  std::vector<std::string> datasets;
  double threshold = 0.5;
  auto* metrics = app.add_subcommand("metrics", "AUROC and balanced accuracy of an id,score,label file");
  metrics->add_option("--predictions", predictions, "Prediction CSV")->required()->check(CLI::ExistingFile);
  metrics->add_option("--groups", metrics_groups, "Evaluate per group of this manifest")->check(CLI::ExistingFile);
  metrics->add_option("--dataset", datasets, "Restrict to these groups");
  metrics->add_option("--threshold", threshold, "Decision threshold")->capture_default_str();
  metrics->add_option("-o,--out", metrics_out, "Write JSON here instead of stdout");

  fs::path performance, correlation_out = "correlation.json";
  auto* correlate = app.add_subcommand("correlate", "Pearson matrix over JSD, cosine and AUROC drop");
  correlate->add_option("--performance", performance, "performance.csv")->required()->check(CLI::ExistingFile);
  correlate->add_option("-o,--out", correlation_out)->capture_default_str();

  StudyOptions study;
  fs::path synth_out = "synthetic";
  std::size_t synth_size = 64;
  auto* synth = app.add_subcommand("synth", "Write a synthetic archive with injected shifts");
  synth->add_option("-o,--out", synth_out)->capture_default_str();
  synth->add_option("--seed", study.seed)->capture_default_str();
  synth->add_option("--per-group", study.per_group)->capture_default_str();
  synth->add_option("--source-size", study.source_size)->capture_default_str();
  synth->add_option("--size", synth_size, "Image width and height")->capture_default_str();

  auto* run = app.add_subcommand("run", "Whole pipeline: group, stats, divergence, sweep, tsne, metrics, report");
  add_inputs(run, o);
  add_grouping(run, o);
  add_images(run, o);
  run->add_option("--embeddings", o.cfg.embeddings, "Embedding CSV files")->check(CLI::ExistingFile);
  run->add_option("--predictions", o.cfg.predictions, "Task classifier predictions (id,score,label)")->check(CLI::ExistingFile);
  add_bootstrap(run, o);
  run->add_option("--sweep-sizes", o.cfg.sweep_sizes)->capture_default_str();
  run->add_option("--sweep-targets", o.cfg.sweep_targets)->capture_default_str();
  add_tsne(run, o);
  add_stats(run, o);
  run->add_flag("--skip-stats", o.skip_stats);
  run->add_flag("--skip-divergence", o.skip_divergence);
  run->add_flag("--skip-sweep", o.skip_sweep);
  run->add_flag("--skip-tsne", o.skip_tsne);
  run->add_flag("--skip-metrics", o.skip_metrics);
  add_common(run, o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  if (verbose) spdlog::set_level(spdlog::level::debug);
  if (quiet) spdlog::set_level(spdlog::level::warn);
  if (threads > 0) omp_set_num_threads(threads);

  try {
    for (auto* sub : app.get_subcommands()) {
      if (o.config) apply_config(sub, *o.config);
    }
    if (*fetch) {
      return cmd_fetch(endpoint, filters, cache_dir, fetch_out, fetch_images, snapshot, mapping, attempts, delay_ms,
                       offline, concurrency);
    }
    if (*group) return cmd_group(o);
    if (*stats) return cmd_stats(o);
    if (*divergence) return cmd_divergence(o);
    if (*sweep) return cmd_sweep(o);
    if (*tsne_cmd) return cmd_tsne(o);
    if (*metrics) return cmd_metrics(predictions, metrics_groups, datasets, threshold, metrics_out);
    if (*correlate) return cmd_correlate(performance, correlation_out);
    if (*synth) {
      study.width = study.height = synth_size;
      return cmd_synth(study, synth_out);
    }
    if (*run) return cmd_run(o);
  } catch (const Error& e) {
    spdlog::error("{}", e.what());
    return exit_code(e.kind());
  } catch (const CLI::Error& e) {
    spdlog::error("Config: {}", e.what());
    return 1;
  } catch (const nlohmann::json::exception& e) {
    spdlog::error("MalformedJson: {}", e.what());
    return exit_code(ErrorKind::MalformedJson);
  } catch (const fs::filesystem_error& e) {
    spdlog::error("Io: {}", e.what());
    return exit_code(ErrorKind::Io);
  }
  return 1;
}
