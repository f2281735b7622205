#include <doctest.h>

#include <cstdlib>
#include <set>

#include "dshift/pipeline.hpp"
#include "dshift/synth.hpp"
#include "test_util.hpp"

using namespace dshift;
using nlohmann::json;

namespace {

/// One small synthetic archive shared by every case in this file.
const std::filesystem::path& study_dir() {
  static testing::TempDir dir("pipeline-study");
  static const bool written = [] {
    StudyOptions o;
    o.per_group = 45;
    o.source_size = 120;
    o.small_group = 10;
    o.width = o.height = 32;
    write_synthetic_study(make_synthetic_study(o), dir.path());
    return true;
  }();
  (void)written;
  return dir.path();
}

PipelineConfig small_config(const std::filesystem::path& out) {
  const auto& d = study_dir();
  PipelineConfig cfg;
  cfg.catalogs = {d / "catalog.csv"};
  cfg.image_roots = {d / "images"};
  cfg.embeddings = {d / "embeddings.csv"};
  cfg.predictions = d / "predictions.csv";
  cfg.output_dir = out;
  cfg.min_group_size = 30;
  cfg.working_resolution = 0;
  cfg.bootstrap.iterations = 5;
  cfg.bootstrap.sample_size = 20;
  cfg.sweep_sizes = {10, 20};
  cfg.tsne.iterations = 100;
  cfg.tsne.perplexity = 10;
  cfg.stats_per_class = 20;
  cfg.seed = 3;
  return cfg;
}

std::map<std::string, std::string> output_hashes(const json& manifest) {
  std::map<std::string, std::string> out;
  for (const auto& o : manifest["outputs"]) out[o["file"]] = o["sha256"];
  return out;
}

std::string stage_status(const json& manifest, const std::string& name) {
  for (const auto& s : manifest["stages"]) {
    if (s["name"] == name) return s["status"];
  }
  return "absent";
}

int cli(const std::string& args) {
  const std::string cmd = std::string(DSHIFT_CLI) + " -q " + args + " > /dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

}  // namespace

TEST_CASE("stage seeds are distinct and follow the master seed") {
  const auto a = stage_seeds(1);
  const std::set<std::uint64_t> distinct = {a.split, a.stats, a.bootstrap, a.tsne};
  CHECK(distinct.size() == 4);
  CHECK(stage_seeds(1).bootstrap == a.bootstrap);
  CHECK(stage_seeds(2).bootstrap != a.bootstrap);
}

TEST_CASE("full synthetic run lists every output with its checksum") {
  testing::TempDir out("pipeline");
  const auto manifest = run_pipeline(small_config(out.path()));
  CHECK(manifest["status"] == "complete");
  CHECK(manifest["version"] == std::string(kToolVersion));
  for (const char* stage : {"ingest", "group", "load_images", "stats", "divergence", "sweep", "tsne", "metrics",
                            "report"}) {
    CHECK_MESSAGE(stage_status(manifest, stage) == "done", stage);
  }
  const auto hashes = output_hashes(manifest);
  for (const char* file : {"groups.json", "groups_summary.csv", "stats.csv", "stats_box.csv",
                           "divergence_iterations.csv", "divergence_summary.csv", "sweep.csv",
                           "projection_melanoma.csv", "projection_nevus.csv", "performance.csv",
                           "correlation.json", "summary.json"}) {
    REQUIRE_MESSAGE(hashes.count(file), file);
    CHECK(hashes.at(file) == sha256_file(out / file));
  }
  const auto on_disk = json::parse(read_text(out / "manifest.json"));
  CHECK(output_hashes(on_disk) == hashes);
  const auto corr = json::parse(read_text(out / "correlation.json"));
  for (const char* cls : {"melanoma", "nevus"}) {
    for (int i = 0; i < 3; ++i) CHECK(corr[cls]["matrix"][i][i].get<double>() == 1.0);
  }
}

TEST_CASE("repeat runs are byte-identical") {
  testing::TempDir a("pipeline"), b("pipeline");
  const auto first = output_hashes(run_pipeline(small_config(a.path())));
  const auto second = output_hashes(run_pipeline(small_config(b.path())));
  CHECK(first == second);
  auto other = small_config(b.path());
  other.seed = 4;
  CHECK(output_hashes(run_pipeline(other)).at("divergence_summary.csv") != first.at("divergence_summary.csv"));
}

TEST_CASE("without embeddings cosine and t-SNE are skipped, JSD still runs") {
  testing::TempDir out("pipeline");
  auto cfg = small_config(out.path());
  cfg.embeddings.clear();
  cfg.run_stats = false;
  cfg.run_sweep = false;
  const auto manifest = run_pipeline(cfg);
  CHECK(stage_status(manifest, "divergence") == "done");
  CHECK(stage_status(manifest, "tsne") == "skipped");
  CHECK(stage_status(manifest, "stats") == "skipped");
  const auto csv = read_text(out / "divergence_summary.csv");
  CHECK(csv.find("\njsd,") != std::string::npos);
  CHECK(csv.find("\ncosine,") == std::string::npos);
  CHECK_FALSE(std::filesystem::exists(out / "projection_nevus.csv"));
}

TEST_CASE("a failing stage leaves a partial manifest and rethrows") {
  testing::TempDir out("pipeline"), empty("pipeline-empty");
  auto cfg = small_config(out.path());
  cfg.image_roots = {empty.path()};
  CHECK_ERROR_KIND(run_pipeline(cfg), ErrorKind::MissingInput);
  const auto manifest = json::parse(read_text(out / "manifest.json"));
  CHECK(manifest["status"] == "failed");
  CHECK(stage_status(manifest, "ingest") == "done");
  CHECK(stage_status(manifest, "group") == "done");
  CHECK(stage_status(manifest, "load_images") == "failed");
  CHECK(stage_status(manifest, "divergence") == "absent");
  CHECK(output_hashes(manifest).count("groups.json") == 1);
}

TEST_CASE("config validation names missing paths") {
  auto cfg = small_config("unused");
  cfg.catalogs = {"/nonexistent/catalog.csv"};
  CHECK_ERROR_KIND(cfg.validate(), ErrorKind::Config);
}

TEST_CASE("grouping survives the manifest round trip") {
  const auto cfg = small_config("unused");
  const auto g = group_stage(load_catalogs(cfg.catalogs), LocalizationMap::default_map(), cfg);
  CHECK(g.targets.front().abbrev == "H");
  CHECK(g.leaked_lesions.empty());
  const auto back = grouping_from_manifest(g.manifest(), "H");
  CHECK(back.train.member_ids == g.train.member_ids);
  CHECK(back.holdout.member_ids == g.holdout.member_ids);
  REQUIRE(back.targets.size() == g.targets.size());
  for (std::size_t i = 0; i < g.targets.size(); ++i) CHECK(back.targets[i].abbrev == g.targets[i].abbrev);
}

TEST_CASE("CLI exit codes") {
  testing::TempDir dir("cli");
  const auto& d = study_dir();
  CHECK(cli("--version") == 0);
  CHECK(cli("") == 1);
  CHECK(cli("group --no-such-flag") == 1);
  CHECK(cli("group --catalog /nonexistent.csv -o " + (dir / "g").string()) == 1);
  write_text(dir / "bad.csv", "image_id,diagnosis\nx,nevus\nx,nevus\n");
  CHECK(cli("group --catalog " + (dir / "bad.csv").string() + " -o " + (dir / "g").string()) == 2);
  CHECK(cli("fetch --offline --endpoint http://127.0.0.1:9/api --cache-dir " + (dir / "cache").string() + " -o " +
            (dir / "f.csv").string()) == 3);
  CHECK(cli("group --catalog " + (d / "catalog.csv").string() + " --min-group-size 30 -o " + (dir / "g").string()) ==
        0);
  CHECK(std::filesystem::exists(dir / "g" / "groups.json"));
}

TEST_CASE("config file values apply and flags override them") {
  testing::TempDir dir("cli");
  const auto& d = study_dir();
  write_text(dir / "run.conf", "# test\ncatalog = \"" + (d / "catalog.csv").string() + "\"\n"
                               "embeddings = \"" + (d / "embeddings.csv").string() + "\"\n"
                               "min-group-size = 30\niterations = 3\nsample-size = 10\nsweep-sizes = [10]\n"
                               "skip-tsne = true\nskip-stats = true\n");
  const auto out = dir / "out";
  CHECK(cli("run --config " + (dir / "run.conf").string() + " --iterations 4 -o " + out.string()) == 0);
  const auto manifest = json::parse(read_text(out / "manifest.json"));
  CHECK(manifest["config"]["bootstrap"]["iterations"] == 4);
  CHECK(manifest["config"]["bootstrap"]["sample_size"] == 10);
  CHECK(manifest["config"]["min_group_size"] == 30);
  CHECK(stage_status(manifest, "tsne") == "skipped");

  write_text(dir / "typo.conf", "iteratoins = 3\n");
  CHECK(cli("run --config " + (dir / "typo.conf").string() + " -o " + out.string()) == 1);
}
