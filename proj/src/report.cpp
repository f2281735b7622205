#include "dshift/report.hpp"

#include <fstream>
#include <sstream>

#include <openssl/evp.h>

#include "dshift/csv.hpp"
#include "dshift/error.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace dshift {

namespace {

using csv::format_double;

std::string opt(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }

std::string rule_age(const GroupRule& r) { return r.age == AgeCondition::AtMost30 ? "<=30" : ">30"; }
std::string rule_loc(const GroupRule& r) {
  return r.bucket ? std::string(to_string(*r.bucket)) : std::string("all");
}

class CsvBuilder {
 public:
  explicit CsvBuilder(std::string_view file) {
    for (const auto& s : csv_schemas()) {
      if (s.file == file) {
        csv::write_row(out_, s.header);
        return;
      }
    }
    throw Error(ErrorKind::InvalidArgument, "no schema for " + std::string(file));
  }
  void row(const std::vector<std::string>& fields) { csv::write_row(out_, fields); }
  std::string str() const { return out_.str(); }

 private:
  std::ostringstream out_;
};

}  // namespace

const std::vector<CsvSchema>& csv_schemas() {
  static const std::vector<CsvSchema> schemas = {
      {"groups_summary.csv",
       {"abbrev", "origin", "age", "localization", "melanoma", "nevus", "total", "biological_shift",
        "technical_shift", "excluded", "reference_melanoma", "reference_nevus"}},
      {"stats.csv", {"image_id", "class", "dataset", "brightness", "rms_contrast", "saturation", "hue", "blur"}},
      {"stats_box.csv",
       {"dataset", "class", "property", "n", "min", "q1", "median", "q3", "max", "lower_fence", "upper_fence",
        "outliers_excluded"}},
      {"divergence_iterations.csv", {"metric", "source", "target", "class", "iteration", "value"}},
      {"divergence_summary.csv",
       {"metric", "source", "target", "class", "sample_size", "iterations", "mean", "median", "std"}},
      {"sweep.csv", {"metric", "source", "target", "class", "sample_size", "mean", "median", "std"}},
      {"projection_<class>.csv", {"image_id", "x", "y", "dataset", "class"}},
      {"performance.csv",
       {"dataset", "class", "jsd_mean", "cosine_mean", "auroc", "auroc_drop", "balanced_accuracy_drop"}},
  };
  return schemas;
}

void validate_csv(std::string_view file, std::string_view bytes) {
  std::string key(file);
  if (key.rfind("projection_", 0) == 0) key = "projection_<class>.csv";
  const CsvSchema* schema = nullptr;
  for (const auto& s : csv_schemas()) {
    if (s.file == key) schema = &s;
  }
  if (!schema) throw Error(ErrorKind::InvalidArgument, "no schema for " + std::string(file));
  const auto rows = csv::parse(bytes);
  if (rows.empty() || rows.front().fields != schema->header) {
    throw Error(ErrorKind::MalformedCsv, std::string(file) + ": header does not match the schema", {}, 1);
  }
  for (const auto& r : rows) {
    if (r.fields.size() != schema->header.size()) {
      throw Error(ErrorKind::MalformedCsv, std::string(file) + ": wrong number of fields", {}, r.line);
    }
  }
}

std::string groups_summary_csv(const std::vector<GroupedDataset>& kept,
                               const std::vector<GroupedDataset>& excluded) {
  CsvBuilder b("groups_summary.csv");
  auto emit = [&](const GroupedDataset& g, bool is_excluded) {
    std::string ref_mel, ref_nev;
    for (const auto& r : reference_counts()) {
      if (r.abbrev == g.abbrev) {
        ref_mel = std::to_string(r.melanoma);
        ref_nev = std::to_string(r.nevus);
      }
    }
    b.row({g.abbrev, g.origin.str(), rule_age(g.rule), rule_loc(g.rule), std::to_string(g.class_counts.melanoma),
           std::to_string(g.class_counts.nevus), std::to_string(g.class_counts.total()),
           g.flags.biological ? "1" : "0", g.flags.technical ? "1" : "0", is_excluded ? "1" : "0", ref_mel,
           ref_nev});
  };
  for (const auto& g : kept) emit(g, false);
  for (const auto& g : excluded) emit(g, true);
  return b.str();
}

std::string stats_csv(const std::vector<StatsRow>& rows) {
  CsvBuilder b("stats.csv");
  for (const auto& r : rows) {
    b.row({r.image_id, std::string(to_string(r.cls)), r.dataset, format_double(r.stats.brightness),
           format_double(r.stats.rms_contrast), format_double(r.stats.saturation), format_double(r.stats.hue),
           format_double(r.stats.blur)});
  }
  return b.str();
}

std::string stats_box_csv(const std::vector<BoxRow>& rows) {
  CsvBuilder b("stats_box.csv");
  for (const auto& r : rows) {
    b.row({r.dataset, std::string(to_string(r.cls)), std::string(to_string(r.property)), std::to_string(r.box.n),
           format_double(r.box.min), format_double(r.box.q1), format_double(r.box.median), format_double(r.box.q3),
           format_double(r.box.max), format_double(r.box.lower_fence), format_double(r.box.upper_fence),
           r.box.outliers_excluded ? "1" : "0"});
  }
  return b.str();
}

std::string divergence_iterations_csv(const std::vector<DivergenceSummary>& rows) {
  CsvBuilder b("divergence_iterations.csv");
  for (const auto& s : rows) {
    for (std::size_t k = 0; k < s.values.size(); ++k) {
      b.row({std::string(to_string(s.metric)), s.source, s.target, std::string(to_string(s.cls)),
             std::to_string(k), format_double(s.values[k])});
    }
  }
  return b.str();
}

std::string divergence_summary_csv(const std::vector<DivergenceSummary>& rows) {
  CsvBuilder b("divergence_summary.csv");
  for (const auto& s : rows) {
    b.row({std::string(to_string(s.metric)), s.source, s.target, std::string(to_string(s.cls)),
           std::to_string(s.sample_size), std::to_string(s.values.size()), format_double(s.mean),
           format_double(s.median), format_double(s.std)});
  }
  return b.str();
}

std::string sweep_csv(const std::vector<DivergenceSummary>& rows) {
  CsvBuilder b("sweep.csv");
  for (const auto& s : rows) {
    b.row({std::string(to_string(s.metric)), s.source, s.target, std::string(to_string(s.cls)),
           std::to_string(s.sample_size), format_double(s.mean), format_double(s.median), format_double(s.std)});
  }
  return b.str();
}

std::string projection_csv(const ProjectionResult& p) {
  CsvBuilder b("projection_<class>.csv");
  const auto& proj = p.projection;
  for (std::size_t i = 0; i < proj.ids.size(); ++i) {
    b.row({proj.ids[i], format_double(proj.coords[2 * i]), format_double(proj.coords[2 * i + 1]),
           i < p.datasets.size() ? p.datasets[i] : std::string(), std::string(to_string(p.cls))});
  }
  return b.str();
}

std::string performance_csv(const PerformanceTable& table) {
  CsvBuilder b("performance.csv");
  for (const auto& r : table.rows) {
    b.row({r.dataset, std::string(to_string(r.cls)), opt(r.jsd_mean), opt(r.cosine_mean), opt(r.auroc),
           opt(r.auroc_drop), opt(r.balanced_accuracy_drop)});
  }
  return b.str();
}

PerformanceTable parse_performance(std::string_view bytes) {
  validate_csv("performance.csv", bytes);
  const auto rows = csv::parse(bytes);
  auto number = [](const csv::Row& row, std::size_t i) -> std::optional<double> {
    const std::string& f = row.fields[i];
    if (csv::trim(f).empty()) return std::nullopt;
    try {
      std::size_t used = 0;
      const double v = std::stod(f, &used);
      if (used != f.size()) throw std::invalid_argument(f);
      return v;
    } catch (const std::exception&) {
      throw Error(ErrorKind::MalformedCsv, "performance.csv: not a number: " + f, {}, row.line);
    }
  };
  PerformanceTable table;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& row = rows[i];
    PerformanceRow r;
    r.dataset = row.fields[0];
    r.cls = parse_diagnosis(row.fields[1]);
    if (r.cls == Diagnosis::Other) {
      throw Error(ErrorKind::MalformedCsv, "performance.csv: unknown class " + row.fields[1], {}, row.line);
    }
    r.jsd_mean = number(row, 2);
    r.cosine_mean = number(row, 3);
    r.auroc = number(row, 4);
    r.auroc_drop = number(row, 5);
    r.balanced_accuracy_drop = number(row, 6);
    table.rows.push_back(std::move(r));
  }
  return table;
}

json summary_json(const RunResults& results) {
  json j = json::object();
  json stages = json::array();
  if (results.groups) {
    stages.push_back("group");
    json groups = json::array();
    for (const auto& g : *results.groups) {
      groups.push_back({{"abbrev", g.abbrev},
                        {"melanoma", g.class_counts.melanoma},
                        {"nevus", g.class_counts.nevus}});
    }
    j["groups"] = groups;
    json excluded = json::array();
    for (const auto& g : results.excluded) excluded.push_back(g.abbrev);
    j["excluded_groups"] = excluded;
  }
  if (!results.stats.empty()) {
    stages.push_back("stats");
    j["stats_images"] = results.stats.size();
  }
  if (!results.divergence.empty()) {
    stages.push_back("divergence");
    json div = json::array();
    for (const auto& s : results.divergence) {
      div.push_back({{"metric", to_string(s.metric)},
                     {"source", s.source},
                     {"target", s.target},
                     {"class", to_string(s.cls)},
                     {"mean", s.mean},
                     {"median", s.median},
                     {"std", s.std}});
    }
    j["divergence"] = div;
  }
  if (!results.sweep.empty()) stages.push_back("sweep");
  if (!results.projections.empty()) {
    stages.push_back("tsne");
    json proj = json::object();
    for (const auto& p : results.projections) {
      proj[std::string(to_string(p.cls))] = {{"points", p.projection.ids.size()},
                                             {"input_points", p.projection.input_points},
                                             {"final_kl", p.projection.final_kl}};
    }
    j["projections"] = proj;
  }
  if (results.performance) stages.push_back("metrics");
  if (!results.correlations.empty()) {
    stages.push_back("correlate");
    j["correlation"] = correlation_report(results.correlations);
  }
  j["stages"] = stages;
  return j;
}

std::vector<std::string> emit_report(const RunResults& results, const fs::path& dir) {
  fs::create_directories(dir);
  std::vector<std::string> written;
  auto put = [&](const std::string& name, const std::string& bytes) {
    write_text(dir / name, bytes);
    written.push_back(name);
  };
  if (results.groups) {
    put("groups.json", groups_to_json(*results.groups).dump(2) + "\n");
    put("groups_summary.csv", groups_summary_csv(*results.groups, results.excluded));
  }
  if (!results.stats.empty()) put("stats.csv", stats_csv(results.stats));
  if (!results.boxes.empty()) put("stats_box.csv", stats_box_csv(results.boxes));
  if (!results.divergence.empty()) {
    put("divergence_iterations.csv", divergence_iterations_csv(results.divergence));
    put("divergence_summary.csv", divergence_summary_csv(results.divergence));
  }
  if (!results.sweep.empty()) put("sweep.csv", sweep_csv(results.sweep));
  for (const auto& p : results.projections) {
    put("projection_" + std::string(to_string(p.cls)) + ".csv", projection_csv(p));
  }
  if (results.performance) put("performance.csv", performance_csv(*results.performance));
  if (!results.correlations.empty()) {
    put("correlation.json", correlation_report(results.correlations).dump(2) + "\n");
  }
  put("summary.json", summary_json(results).dump(2) + "\n");
  return written;
}

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error(ErrorKind::Io, "SHA-256 computation failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 15]);
  }
  return out;
}

std::string sha256_file(const fs::path& path) { return sha256_hex(read_text(path)); }

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::MissingInput, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, std::string_view bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::Io, "write failed for " + path.string());
}

}  // namespace dshift
