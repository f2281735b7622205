#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "dshift/divergence.hpp"
#include "dshift/grouping.hpp"
#include "dshift/image_stats.hpp"
#include "dshift/metrics.hpp"
#include "dshift/tsne.hpp"

namespace dshift {

struct StatsRow {
  std::string image_id;
  Diagnosis cls = Diagnosis::Nevus;
  std::string dataset;
  ImageStatsRecord stats;
};

struct BoxRow {
  std::string dataset;
  Diagnosis cls = Diagnosis::Nevus;
  Property property = Property::Brightness;
  BoxSummary box;
};

struct ProjectionResult {
  Diagnosis cls = Diagnosis::Nevus;
  Projection projection;
  std::vector<std::string> datasets;  // aligned with projection.ids
};

/// Everything a run produced. Absent parts are simply not written.
struct RunResults {
  std::optional<std::vector<GroupedDataset>> groups;
  std::vector<GroupedDataset> excluded;
  std::vector<StatsRow> stats;
  std::vector<BoxRow> boxes;
  std::vector<DivergenceSummary> divergence;
  std::vector<DivergenceSummary> sweep;
  std::vector<ProjectionResult> projections;
  std::optional<PerformanceTable> performance;
  std::vector<CorrelationMatrix> correlations;
};

struct CsvSchema {
  std::string file;
  std::vector<std::string> header;
};

/// Documented headers of every CSV the tools write. Projection files share
/// one schema under the name "projection_<class>.csv".
const std::vector<CsvSchema>& csv_schemas();

/// Throws MalformedCsv if `bytes` does not start with the documented
/// header for `file` or a row has the wrong width.
void validate_csv(std::string_view file, std::string_view bytes);

std::string groups_summary_csv(const std::vector<GroupedDataset>& kept,
                               const std::vector<GroupedDataset>& excluded);
std::string stats_csv(const std::vector<StatsRow>& rows);
std::string stats_box_csv(const std::vector<BoxRow>& rows);
std::string divergence_iterations_csv(const std::vector<DivergenceSummary>& rows);
std::string divergence_summary_csv(const std::vector<DivergenceSummary>& rows);
std::string sweep_csv(const std::vector<DivergenceSummary>& rows);
std::string projection_csv(const ProjectionResult& p);
std::string performance_csv(const PerformanceTable& table);
PerformanceTable parse_performance(std::string_view bytes);
nlohmann::json summary_json(const RunResults& results);

/// Writes the files for every present part of `results` into `dir` and
/// returns their names in writing order.
std::vector<std::string> emit_report(const RunResults& results, const std::filesystem::path& dir);

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

/// Reads a whole file. Throws MissingInput if it does not exist.
std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, std::string_view bytes);

}  // namespace dshift
