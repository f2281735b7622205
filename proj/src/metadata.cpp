#include "dshift/metadata.hpp"

#include <algorithm>
#include <charconv>
#include <sstream>

#include <spdlog/spdlog.h>

#include "dshift/csv.hpp"
#include "dshift/default_loc_map.hpp"
#include "dshift/error.hpp"

namespace dshift {

std::string_view to_string(Diagnosis d) noexcept {
  switch (d) {
    case Diagnosis::Melanoma: return "melanoma";
    case Diagnosis::Nevus: return "nevus";
    case Diagnosis::Other: return "other";
  }
  return "other";
}

std::string_view to_string(Sex s) noexcept {
  return s == Sex::Male ? "male" : "female";
}

std::string_view to_string(LocalizationBucket b) noexcept {
  switch (b) {
    case LocalizationBucket::Body: return "body";
    case LocalizationBucket::HeadNeck: return "head_neck";
    case LocalizationBucket::PalmsSoles: return "palms_soles";
    case LocalizationBucket::OralGenital: return "oral_genital";
    case LocalizationBucket::Unknown: return "unknown";
  }
  return "unknown";
}

Diagnosis parse_diagnosis(std::string_view s) {
  const std::string v = csv::to_lower(csv::trim(s));
  if (v == "melanoma") return Diagnosis::Melanoma;
  if (v == "nevus") return Diagnosis::Nevus;
  return Diagnosis::Other;
}

std::optional<LocalizationBucket> parse_bucket(std::string_view s) {
  const std::string v = csv::to_lower(csv::trim(s));
  for (auto b : {LocalizationBucket::Body, LocalizationBucket::HeadNeck,
                 LocalizationBucket::PalmsSoles, LocalizationBucket::OralGenital,
                 LocalizationBucket::Unknown}) {
    if (v == to_string(b)) return b;
  }
  return std::nullopt;
}

Origin Origin::parse(std::string_view s) {
  const std::string trimmed = csv::trim(s);
  const std::string v = csv::to_lower(trimmed);
  if (v == "ham") return ham();
  if (v == "bcn") return bcn();
  if (v == "msk") return msk();
  return other(trimmed);
}

std::string Origin::str() const {
  switch (kind) {
    case Kind::HAM: return "HAM";
    case Kind::BCN: return "BCN";
    case Kind::MSK: return "MSK";
    case Kind::Other: return name;
  }
  return name;
}

Catalog::Catalog(std::string source_name, std::vector<MetadataRecord> records)
    : source_name_(std::move(source_name)), records_(std::move(records)) {
  std::vector<std::string> duplicates;
  index_.reserve(records_.size());
  for (std::size_t i = 0; i < records_.size(); ++i) {
    const auto& r = records_[i];
    if (r.age_years && (*r.age_years < 0 || *r.age_years > 120)) {
      throw Error(ErrorKind::MalformedCsv,
                  "age out of range [0,120] for image " + r.image_id, {r.image_id});
    }
    if (!index_.emplace(r.image_id, i).second) duplicates.push_back(r.image_id);
  }
  if (!duplicates.empty()) {
    std::sort(duplicates.begin(), duplicates.end());
    duplicates.erase(std::unique(duplicates.begin(), duplicates.end()), duplicates.end());
    std::string msg = "duplicate image ids:";
    for (const auto& d : duplicates) msg += " " + d;
    throw Error(ErrorKind::DuplicateImageId, msg, duplicates);
  }
}

const MetadataRecord* Catalog::find(std::string_view image_id) const {
  auto it = index_.find(std::string(image_id));
  return it == index_.end() ? nullptr : &records_[it->second];
}

LocalizationMap::LocalizationMap(const LocalizationMap& other) : entries_(other.entries_) {}

LocalizationMap& LocalizationMap::operator=(const LocalizationMap& other) {
  if (this != &other) {
    entries_ = other.entries_;
    std::lock_guard lock(warned_mutex_);
    warned_.clear();
  }
  return *this;
}

LocalizationMap LocalizationMap::from_csv(std::string_view text) {
  const auto rows = csv::parse(text);
  if (rows.empty()) {
    throw Error(ErrorKind::MissingRequiredColumn, "localization map has no header", {"raw", "bucket"});
  }
  const auto raw_col = csv::column(rows[0], "raw");
  const auto bucket_col = csv::column(rows[0], "bucket");
  if (!raw_col || !bucket_col) {
    throw Error(ErrorKind::MissingRequiredColumn, "localization map needs raw,bucket columns",
                {"raw", "bucket"});
  }
  LocalizationMap map;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& row = rows[i];
    if (row.fields.size() != rows[0].fields.size()) {
      throw Error(ErrorKind::MalformedCsv, "wrong field count in localization map", {}, row.line);
    }
    const auto bucket = parse_bucket(row.fields[*bucket_col]);
    if (!bucket) {
      throw Error(ErrorKind::MalformedCsv, "unknown bucket '" + row.fields[*bucket_col] + "'", {},
                  row.line);
    }
    map.set(row.fields[*raw_col], *bucket);
  }
  return map;
}

const LocalizationMap& LocalizationMap::default_map() {
  static const LocalizationMap map = from_csv(resources::kDefaultLocalizationMap);
  return map;
}

void LocalizationMap::set(std::string_view raw, LocalizationBucket bucket) {
  entries_[csv::to_lower(csv::trim(raw))] = bucket;
}

LocalizationBucket LocalizationMap::lookup(std::string_view raw) const {
  const std::string key = csv::to_lower(csv::trim(raw));
  auto it = entries_.find(key);
  if (it != entries_.end()) return it->second;
  std::lock_guard lock(warned_mutex_);
  if (warned_.insert(key).second) {
    spdlog::warn("unmapped localization '{}' treated as unknown", key);
  }
  return LocalizationBucket::Unknown;
}

LocalizationBucket map_localization(std::string_view raw, const LocalizationMap& map) {
  return map.lookup(raw);
}

namespace {

std::optional<std::string> optional_field(const csv::Row& row, std::optional<std::size_t> col) {
  if (!col) return std::nullopt;
  std::string v = csv::trim(row.fields[*col]);
  if (v.empty()) return std::nullopt;
  return v;
}

int parse_age(const std::string& text, std::size_t line) {
  int value = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size()) {
    throw Error(ErrorKind::MalformedCsv, "age_years is not an integer: '" + text + "'", {}, line);
  }
  if (value < 0 || value > 120) {
    throw Error(ErrorKind::MalformedCsv, "age_years out of range [0,120]: " + text, {}, line);
  }
  return value;
}

Sex parse_sex(const std::string& text, std::size_t line) {
  const std::string v = csv::to_lower(text);
  if (v == "male" || v == "m") return Sex::Male;
  if (v == "female" || v == "f") return Sex::Female;
  throw Error(ErrorKind::MalformedCsv, "unrecognized sex '" + text + "'", {}, line);
}

}  // namespace

Catalog parse_catalog(std::string_view bytes, std::string source_name) {
  const auto rows = csv::parse(bytes);
  if (rows.empty()) {
    throw Error(ErrorKind::MissingRequiredColumn, "catalog has no header row",
                {"image_id", "diagnosis"});
  }
  const auto& header = rows[0];
  const auto id_col = csv::column(header, "image_id");
  const auto diag_col = csv::column(header, "diagnosis");
  std::vector<std::string> missing;
  if (!id_col) missing.emplace_back("image_id");
  if (!diag_col) missing.emplace_back("diagnosis");
  if (!missing.empty()) {
    throw Error(ErrorKind::MissingRequiredColumn, "catalog header lacks required columns", missing);
  }
  const auto lesion_col = csv::column(header, "lesion_id");
  const auto age_col = csv::column(header, "age_years");
  const auto loc_col = csv::column(header, "localization");
  const auto origin_col = csv::column(header, "origin");
  const auto sex_col = csv::column(header, "sex");

  std::vector<MetadataRecord> records;
  records.reserve(rows.size() - 1);
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& row = rows[i];
    if (row.fields.size() != header.fields.size()) {
      throw Error(ErrorKind::MalformedCsv,
                  "expected " + std::to_string(header.fields.size()) + " fields, found " +
                      std::to_string(row.fields.size()),
                  {}, row.line);
    }
    MetadataRecord r;
    r.image_id = csv::trim(row.fields[*id_col]);
    if (r.image_id.empty()) {
      throw Error(ErrorKind::MalformedCsv, "empty image_id", {}, row.line);
    }
    r.lesion_id = optional_field(row, lesion_col);
    r.diagnosis = parse_diagnosis(row.fields[*diag_col]);
    if (auto age = optional_field(row, age_col)) r.age_years = parse_age(*age, row.line);
    if (loc_col) r.localization_raw = csv::trim(row.fields[*loc_col]);
    r.origin = Origin::parse(origin_col ? row.fields[*origin_col] : std::string_view{});
    if (auto sex = optional_field(row, sex_col)) r.sex = parse_sex(*sex, row.line);
    records.push_back(std::move(r));
  }
  return Catalog(std::move(source_name), std::move(records));
}

std::string serialize_catalog(const Catalog& catalog) {
  std::ostringstream out;
  csv::write_row(out, {"image_id", "lesion_id", "diagnosis", "age_years", "localization", "origin",
                       "sex"});
  for (const auto& r : catalog.records()) {
    csv::write_row(out, {r.image_id, r.lesion_id.value_or(""), std::string(to_string(r.diagnosis)),
                         r.age_years ? std::to_string(*r.age_years) : "", r.localization_raw,
                         r.origin.str(), r.sex ? std::string(to_string(*r.sex)) : ""});
  }
  return out.str();
}

Catalog merge_catalogs(const std::vector<Catalog>& parts) {
  if (parts.size() == 1) return parts.front();
  std::vector<MetadataRecord> records;
  std::string name;
  for (const auto& part : parts) {
    if (!name.empty()) name += "+";
    name += part.source_name();
    records.insert(records.end(), part.records().begin(), part.records().end());
  }
  return Catalog(std::move(name), std::move(records));
}

std::vector<DuplicateGroup> detect_duplicates(const Catalog& catalog) {
  std::map<std::string, std::vector<std::string>> by_lesion;
  for (const auto& r : catalog.records()) {
    if (r.lesion_id) by_lesion[*r.lesion_id].push_back(r.image_id);
  }
  std::vector<DuplicateGroup> groups;
  for (auto& [lesion, ids] : by_lesion) {
    if (ids.size() >= 2) groups.push_back({lesion, std::move(ids)});
  }
  return groups;
}

}  // namespace dshift
