#include <doctest.h>

#include <set>

#include "dshift/report.hpp"
#include "test_util.hpp"

using namespace dshift;

namespace {

GroupedDataset small_group(const std::string& abbrev) {
  GroupedDataset g;
  g.abbrev = abbrev;
  g.origin = Origin::ham();
  g.add(abbrev + "_1", Diagnosis::Melanoma);
  g.add(abbrev + "_2", Diagnosis::Nevus);
  return g;
}

DivergenceSummary summary(Metric m, const std::string& target, std::size_t n) {
  DivergenceSummary s;
  s.metric = m;
  s.source = "H";
  s.target = target;
  s.cls = Diagnosis::Melanoma;
  s.sample_size = n;
  s.values = {0.1, 0.2, 0.4};
  finalize_summary(s);
  return s;
}

RunResults full_results() {
  RunResults r;
  r.groups = std::vector<GroupedDataset>{small_group("H"), small_group("B")};
  r.excluded = {small_group("HLO")};
  r.stats.push_back({"H_1", Diagnosis::Melanoma, "H", {0.5, 0.1, 0.3, 20.0, 0.01}});
  BoxRow box;
  box.dataset = "H";
  box.box = summarize_values({1, 2, 3}, true);
  r.boxes.push_back(box);
  r.divergence = {summary(Metric::Jsd, "B", 250), summary(Metric::Cosine, "B", 250)};
  r.sweep = {summary(Metric::Jsd, "B", 50), summary(Metric::Jsd, "B", 100)};
  ProjectionResult p;
  p.cls = Diagnosis::Nevus;
  p.projection.ids = {"H_2", "B_2"};
  p.projection.coords = {0.5, -1.0, 2.0, 3.0};
  p.datasets = {"H", "B"};
  r.projections.push_back(p);
  PerformanceTable t;
  t.rows.push_back({"B", Diagnosis::Melanoma, 0.1, 0.9, 0.7, 0.2, 0.1});
  t.rows.push_back({"M", Diagnosis::Melanoma, 0.3, 0.8, 0.6, 0.3, std::nullopt});
  t.rows.push_back({"X", Diagnosis::Melanoma, 0.2, 0.85, std::nullopt, std::nullopt, std::nullopt});
  r.performance = t;
  r.correlations.push_back(correlation_matrix(t, Diagnosis::Melanoma));
  return r;
}

}  // namespace

TEST_CASE("SHA-256 test vector") {
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST_CASE("every CSV of a full result set validates against its schema") {
  testing::TempDir dir("report");
  const auto written = emit_report(full_results(), dir.path());
  std::size_t csvs = 0;
  for (const auto& name : written) {
    if (std::filesystem::path(name).extension() != ".csv") continue;
    ++csvs;
    CHECK_NOTHROW(validate_csv(name, read_text(dir / name)));
  }
  CHECK(csvs == 8);
  CHECK(written.back() == "summary.json");
  const auto corr = nlohmann::json::parse(read_text(dir / "correlation.json"));
  for (int i = 0; i < 3; ++i) CHECK(corr["melanoma"]["matrix"][i][i].get<double>() == 1.0);
}

TEST_CASE("divergence-only results write only the divergence files") {
  testing::TempDir dir("report");
  RunResults r;
  r.divergence = {summary(Metric::Jsd, "B", 250)};
  const auto written = emit_report(r, dir.path());
  CHECK(written == std::vector<std::string>{"divergence_iterations.csv", "divergence_summary.csv", "summary.json"});
  std::set<std::string> on_disk;
  for (const auto& e : std::filesystem::directory_iterator(dir.path())) on_disk.insert(e.path().filename().string());
  CHECK(on_disk == std::set<std::string>(written.begin(), written.end()));
}

TEST_CASE("iteration CSV has one row per bootstrap value") {
  const auto csv = divergence_iterations_csv({summary(Metric::Jsd, "B", 250)});
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
  CHECK(csv.find("jsd,H,B,melanoma,0,") != std::string::npos);
}

TEST_CASE("schema violations are reported") {
  CHECK_ERROR_KIND(validate_csv("sweep.csv", "metric,source\n"), ErrorKind::MalformedCsv);
  const auto good = sweep_csv({summary(Metric::Jsd, "B", 50)});
  CHECK_NOTHROW(validate_csv("sweep.csv", good));
  CHECK_ERROR_KIND(validate_csv("sweep.csv", good + "jsd,H\n"), ErrorKind::MalformedCsv);
  CHECK_ERROR_KIND(validate_csv("unknown.csv", good), ErrorKind::InvalidArgument);
}

TEST_CASE("performance CSV round trip keeps absent cells absent") {
  const auto t = *full_results().performance;
  const auto back = parse_performance(performance_csv(t));
  REQUIRE(back.rows.size() == t.rows.size());
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    CHECK(back.rows[i].dataset == t.rows[i].dataset);
    CHECK(back.rows[i].cls == t.rows[i].cls);
    CHECK(back.rows[i].jsd_mean == t.rows[i].jsd_mean);
    CHECK(back.rows[i].cosine_mean == t.rows[i].cosine_mean);
    CHECK(back.rows[i].auroc == t.rows[i].auroc);
    CHECK(back.rows[i].auroc_drop == t.rows[i].auroc_drop);
    CHECK(back.rows[i].balanced_accuracy_drop == t.rows[i].balanced_accuracy_drop);
  }
}

TEST_CASE("emitting twice gives identical bytes") {
  testing::TempDir a("report"), b("report");
  const auto r = full_results();
  emit_report(r, b.path());
  for (const auto& name : emit_report(r, a.path())) {
    CHECK(sha256_file(a / name) == sha256_file(b / name));
  }
  CHECK_ERROR_KIND(read_text(a / "nope.csv"), ErrorKind::MissingInput);
}
