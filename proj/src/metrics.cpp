#include "dshift/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "dshift/csv.hpp"
#include "dshift/error.hpp"

namespace dshift {

PredictionSet PredictionSet::subset(std::span<const std::string> ids) const {
  std::unordered_map<std::string_view, std::size_t> index;
  for (std::size_t i = 0; i < entries.size(); ++i) index.emplace(entries[i].id, i);
  PredictionSet out;
  out.entries.reserve(ids.size());
  for (const auto& id : ids) {
    auto it = index.find(id);
    if (it == index.end()) throw Error(ErrorKind::MissingInput, "no prediction for " + id, {id});
    out.entries.push_back(entries[it->second]);
  }
  return out;
}

PredictionSet parse_predictions(std::string_view bytes) {
  const auto rows = csv::parse(bytes);
  if (rows.empty()) throw Error(ErrorKind::MissingRequiredColumn, "prediction file has no header", {"id", "score", "label"});
  const auto id_col = csv::column(rows[0], "id");
  const auto score_col = csv::column(rows[0], "score");
  const auto label_col = csv::column(rows[0], "label");
  std::vector<std::string> missing;
  if (!id_col) missing.emplace_back("id");
  if (!score_col) missing.emplace_back("score");
  if (!label_col) missing.emplace_back("label");
  if (!missing.empty()) throw Error(ErrorKind::MissingRequiredColumn, "prediction header incomplete", missing);

  PredictionSet out;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& row = rows[i];
    if (row.fields.size() != rows[0].fields.size()) {
      throw Error(ErrorKind::MalformedCsv, "wrong field count", {}, row.line);
    }
    Prediction p;
    p.id = csv::trim(row.fields[*id_col]);
    const std::string score = csv::trim(row.fields[*score_col]);
    auto [ptr, ec] = std::from_chars(score.data(), score.data() + score.size(), p.score);
    if (ec != std::errc{} || ptr != score.data() + score.size()) {
      throw Error(ErrorKind::MalformedCsv, "score is not a number: '" + score + "'", {p.id}, row.line);
    }
    if (!std::isfinite(p.score)) {
      throw Error(ErrorKind::NonFiniteValue, "non-finite score for " + p.id, {p.id}, row.line);
    }
    const std::string label = csv::trim(row.fields[*label_col]);
    if (label == "0") {
      p.label = 0;
    } else if (label == "1") {
      p.label = 1;
    } else {
      throw Error(ErrorKind::MalformedCsv, "label must be 0 or 1, got '" + label + "'", {p.id}, row.line);
    }
    out.entries.push_back(std::move(p));
  }
  return out;
}

std::string write_predictions(const PredictionSet& preds) {
  std::ostringstream out;
  csv::write_row(out, {"id", "score", "label"});
  for (const auto& p : preds.entries) {
    csv::write_row(out, {p.id, csv::format_double(p.score), std::to_string(p.label)});
  }
  return out.str();
}

double auroc(const PredictionSet& preds) {
  const auto& e = preds.entries;
  std::vector<std::size_t> order(e.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return e[a].score < e[b].score; });

  // Twice the positive rank sum, with tied blocks sharing their mid-rank;
  // kept in integers so the statistic is exact.
  std::uint64_t twice_rank_sum = 0;
  std::uint64_t pos = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j < order.size() && e[order[j]].score == e[order[i]].score) ++j;
    const std::uint64_t twice_mid_rank = static_cast<std::uint64_t>(i + 1 + j);  // ranks i+1..j
    for (std::size_t k = i; k < j; ++k) {
      if (e[order[k]].label == 1) {
        twice_rank_sum += twice_mid_rank;
        ++pos;
      }
    }
    i = j;
  }
  const std::uint64_t neg = e.size() - pos;
  if (pos == 0 || neg == 0) throw Error(ErrorKind::SingleClass, "AUROC needs both labels");
  const std::uint64_t twice_u = twice_rank_sum - pos * (pos + 1);
  return static_cast<double>(twice_u) / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
}

double balanced_accuracy(const PredictionSet& preds, double threshold) {
  std::size_t tp = 0, fn = 0, tn = 0, fp = 0;
  for (const auto& p : preds.entries) {
    const bool predicted = p.score >= threshold;
    if (p.label == 1) {
      predicted ? ++tp : ++fn;
    } else {
      predicted ? ++fp : ++tn;
    }
  }
  if (tp + fn == 0 || tn + fp == 0) throw Error(ErrorKind::SingleClass, "balanced accuracy needs both labels");
  const double tpr = static_cast<double>(tp) / static_cast<double>(tp + fn);
  const double tnr = static_cast<double>(tn) / static_cast<double>(tn + fp);
  return 0.5 * (tpr + tnr);
}

double performance_drop(double reference, double shifted) noexcept { return reference - shifted; }

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw Error(ErrorKind::LengthMismatch, "pearson inputs differ in length");
  if (x.size() < 2) throw Error(ErrorKind::LengthMismatch, "pearson needs at least two points");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw Error(ErrorKind::ZeroVariance, "pearson input has zero variance");
  const double r = sxy / std::sqrt(sxx * syy);
  return std::clamp(r, -1.0, 1.0);
}

CorrelationMatrix correlation_matrix(const PerformanceTable& table, Diagnosis cls) {
  CorrelationMatrix m;
  m.cls = cls;
  std::array<std::vector<double>, 3> cols;
  for (const auto& row : table.rows) {
    if (row.cls != cls || !row.jsd_mean || !row.cosine_mean || !row.auroc_drop) continue;
    cols[0].push_back(*row.jsd_mean);
    cols[1].push_back(*row.cosine_mean);
    cols[2].push_back(*row.auroc_drop);
    m.datasets.push_back(row.dataset);
  }
  if (m.datasets.size() < 2) {
    throw Error(ErrorKind::LengthMismatch,
                "correlation needs at least two datasets with JSD, cosine and AUROC drop for " +
                    std::string(to_string(cls)));
  }
  for (std::size_t a = 0; a < 3; ++a) {
    m.r[a][a] = 1.0;
    for (std::size_t b = a + 1; b < 3; ++b) {
      m.r[a][b] = m.r[b][a] = pearson(cols[a], cols[b]);
    }
  }
  return m;
}

nlohmann::json correlation_report(std::span<const CorrelationMatrix> matrices) {
  nlohmann::json out = nlohmann::json::object();
  for (const auto& m : matrices) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& row : m.r) rows.push_back({row[0], row[1], row[2]});
    out[std::string(to_string(m.cls))] = {
        {"labels", {kCorrelationLabels[0], kCorrelationLabels[1], kCorrelationLabels[2]}},
        {"matrix", rows},
        {"datasets", m.datasets},
    };
  }
  return out;
}

}  // namespace dshift
