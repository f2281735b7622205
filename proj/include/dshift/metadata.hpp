#pragma once

#include <compare>
#include <cstddef>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace dshift {

enum class Diagnosis { Melanoma, Nevus, Other };
enum class Sex { Male, Female };
enum class LocalizationBucket { Body, HeadNeck, PalmsSoles, OralGenital, Unknown };

std::string_view to_string(Diagnosis d) noexcept;
std::string_view to_string(Sex s) noexcept;
std::string_view to_string(LocalizationBucket b) noexcept;

/// Case-insensitive exact match on "melanoma" / "nevus"; anything else is Other.
Diagnosis parse_diagnosis(std::string_view s);
std::optional<LocalizationBucket> parse_bucket(std::string_view s);

/// Acquisition source of an image. The three archive datasets used for
/// grouping get dedicated kinds; any other source keeps its name.
struct Origin {
  enum class Kind { HAM, BCN, MSK, Other };

  Kind kind = Kind::Other;
  std::string name;  // only meaningful for Kind::Other

  static Origin ham() { return {Kind::HAM, {}}; }
  static Origin bcn() { return {Kind::BCN, {}}; }
  static Origin msk() { return {Kind::MSK, {}}; }
  static Origin other(std::string name) { return {Kind::Other, std::move(name)}; }

  /// "ham"/"bcn"/"msk" (case-insensitive, trimmed) map to the named kinds.
  static Origin parse(std::string_view s);
  std::string str() const;

  bool operator==(const Origin&) const = default;
  auto operator<=>(const Origin&) const = default;
};

struct MetadataRecord {
  std::string image_id;
  std::optional<std::string> lesion_id;
  Diagnosis diagnosis = Diagnosis::Other;
  std::optional<int> age_years;
  std::string localization_raw;
  Origin origin;
  std::optional<Sex> sex;  // carried through, never used for grouping

  bool operator==(const MetadataRecord&) const = default;
};

/// Immutable, validated list of records. Construction rejects duplicate
/// image ids and ages outside [0, 120].
class Catalog {
 public:
  Catalog() = default;
  Catalog(std::string source_name, std::vector<MetadataRecord> records);

  const std::vector<MetadataRecord>& records() const noexcept { return records_; }
  const std::string& source_name() const noexcept { return source_name_; }
  std::size_t size() const noexcept { return records_.size(); }
  bool empty() const noexcept { return records_.empty(); }

  const MetadataRecord* find(std::string_view image_id) const;

  bool operator==(const Catalog& other) const {
    return source_name_ == other.source_name_ && records_ == other.records_;
  }

 private:
  std::string source_name_;
  std::vector<MetadataRecord> records_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Raw localization vocabulary to bucket. Keys are trimmed and lowercased;
/// lookups of unknown strings return Unknown and warn once per string.
class LocalizationMap {
 public:
  LocalizationMap() = default;
  LocalizationMap(const LocalizationMap& other);
  LocalizationMap& operator=(const LocalizationMap& other);

  /// Parses a `raw,bucket` CSV. Bucket names: body, head_neck,
  /// palms_soles, oral_genital, unknown.
  static LocalizationMap from_csv(std::string_view text);
  static const LocalizationMap& default_map();

  void set(std::string_view raw, LocalizationBucket bucket);
  LocalizationBucket lookup(std::string_view raw) const;
  const std::map<std::string, LocalizationBucket>& entries() const noexcept { return entries_; }

 private:
  std::map<std::string, LocalizationBucket> entries_;
  mutable std::mutex warned_mutex_;
  mutable std::set<std::string> warned_;
};

/// Parses a catalog CSV. Required columns: image_id, diagnosis. Optional
/// columns (lesion_id, age_years, localization, origin, sex) may be absent
/// from the header; empty cells are absent values. Any unreadable row
/// rejects the whole file.
Catalog parse_catalog(std::string_view bytes, std::string source_name);

/// Canonical CSV: `image_id,lesion_id,diagnosis,age_years,localization,origin,sex`.
std::string serialize_catalog(const Catalog& catalog);

/// Concatenates catalogs; duplicate ids across inputs are an error.
Catalog merge_catalogs(const std::vector<Catalog>& parts);

LocalizationBucket map_localization(std::string_view raw, const LocalizationMap& map);

struct DuplicateGroup {
  std::string lesion_id;
  std::vector<std::string> image_ids;  // catalog order

  bool operator==(const DuplicateGroup&) const = default;
};

/// Lesion ids shared by two or more images, sorted by lesion id.
std::vector<DuplicateGroup> detect_duplicates(const Catalog& catalog);

}  // namespace dshift
