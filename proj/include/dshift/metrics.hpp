#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "dshift/metadata.hpp"

namespace dshift {

struct Prediction {
  std::string id;
  double score = 0;
  int label = 0;  // 0 or 1

  bool operator==(const Prediction&) const = default;
};

struct PredictionSet {
  std::vector<Prediction> entries;

  /// Entries whose id is in `ids`, in `ids` order. Missing ids throw MissingInput.
  PredictionSet subset(std::span<const std::string> ids) const;
};

/// CSV `id,score,label`. Scores must be finite, labels 0 or 1.
PredictionSet parse_predictions(std::string_view bytes);
std::string write_predictions(const PredictionSet& preds);

/// Mann-Whitney AUROC: P(score_pos > score_neg) + 0.5 P(tie).
/// Throws SingleClass unless both labels occur.
double auroc(const PredictionSet& preds);

/// Mean of per-class recall, predicting positive when score >= threshold.
double balanced_accuracy(const PredictionSet& preds, double threshold = 0.5);

double performance_drop(double reference, double shifted) noexcept;

/// Sample Pearson correlation. Throws LengthMismatch (different lengths or
/// n < 2) and ZeroVariance.
double pearson(std::span<const double> x, std::span<const double> y);

/// One dataset's row for one class. Divergence columns are per class; the
/// classifier columns describe the whole dataset and repeat across classes.
struct PerformanceRow {
  std::string dataset;
  Diagnosis cls = Diagnosis::Nevus;
  std::optional<double> jsd_mean;
  std::optional<double> cosine_mean;
  std::optional<double> auroc;
  std::optional<double> auroc_drop;
  std::optional<double> balanced_accuracy_drop;
};

struct PerformanceTable {
  std::vector<PerformanceRow> rows;
};

inline constexpr std::array<std::string_view, 3> kCorrelationLabels = {
    "JS divergence", "Cosine similarity", "AUROC drop"};

struct CorrelationMatrix {
  Diagnosis cls = Diagnosis::Nevus;
  std::array<std::array<double, 3>, 3> r{};
  std::vector<std::string> datasets;  // rows that entered the correlation
};

/// Pearson matrix over {JSD, cosine, AUROC drop} using the class's rows
/// that carry all three values. Throws LengthMismatch with fewer than two.
CorrelationMatrix correlation_matrix(const PerformanceTable& table, Diagnosis cls);

/// {"melanoma": {"labels": [...], "matrix": [[...]], "datasets": [...]}, ...}
nlohmann::json correlation_report(std::span<const CorrelationMatrix> matrices);

}  // namespace dshift
