#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dshift/metadata.hpp"

namespace dshift {

enum class AgeCondition { AtMost30, Over30 };

/// Leaf of the grouping tree. `bucket` is nullopt for the young-patient
/// leaf, which spans all localizations.
struct GroupRule {
  AgeCondition age = AgeCondition::Over30;
  std::optional<LocalizationBucket> bucket = LocalizationBucket::Body;

  bool operator==(const GroupRule&) const = default;
};

struct ShiftFlags {
  bool biological = false;
  bool technical = false;

  bool operator==(const ShiftFlags&) const = default;
};

struct ClassCounts {
  std::size_t melanoma = 0;
  std::size_t nevus = 0;

  std::size_t total() const noexcept { return melanoma + nevus; }
  std::size_t of(Diagnosis d) const noexcept { return d == Diagnosis::Melanoma ? melanoma : nevus; }
  bool operator==(const ClassCounts&) const = default;
};

/// A named domain. `member_classes[i]` is the diagnosis of `member_ids[i]`.
struct GroupedDataset {
  std::string abbrev;
  Origin origin;
  GroupRule rule;
  std::vector<std::string> member_ids;
  std::vector<Diagnosis> member_classes;
  ClassCounts class_counts;
  ShiftFlags flags;

  std::size_t size() const noexcept { return member_ids.size(); }
  std::vector<std::string> ids_of(Diagnosis cls) const;
  void add(std::string id, Diagnosis cls);
};

/// Short dataset name: origin letter (H/B/M, or the origin name for other
/// sources) followed by "" (default), "A" (age <= 30), "LH", "LP" or "LO".
std::string abbreviation(const Origin& origin, const GroupRule& rule);

ShiftFlags shift_flags(const Origin& origin, const GroupRule& rule, const Origin& source_origin);

/// Applies the age / localization rule tree. Emits five candidate groups
/// per origin (default, young, head/neck, palms/soles, oral/genital) for
/// HAM, BCN, MSK and every other origin present. Only melanoma and nevus
/// records with a known age and a mapped localization are placed.
std::vector<GroupedDataset> apply_grouping(const Catalog& catalog, const Origin& source_origin,
                                           const LocalizationMap& map);

struct Exclusion {
  std::vector<GroupedDataset> kept;
  std::vector<GroupedDataset> removed;
};

/// Removes groups with total size <= min_total.
Exclusion exclude_small(std::vector<GroupedDataset> groups, std::size_t min_total = 200);

struct SplitSpec {
  double train_fraction = 0.8;
  std::uint64_t seed = 0;
  bool lesion_aware = true;
};

struct Split {
  GroupedDataset train;
  GroupedDataset holdout;
};

/// Per-class split: floor(train_fraction * n) members of each class go to
/// train, the remainder to holdout. Member order is a deterministic
/// shuffle keyed by (seed, image id), so the result does not depend on the
/// group's member order.
Split stratified_split(const GroupedDataset& group, const SplitSpec& spec);

/// Lesion-aware variant: when `spec.lesion_aware` is set, members sharing a
/// lesion id in `catalog` are kept on one side. Class targets are filled
/// greedily with whole clusters, so counts can fall short of the floor
/// target when clusters do not fit exactly.
Split stratified_split(const GroupedDataset& group, const SplitSpec& spec, const Catalog& catalog);

/// Lesion ids with images on both sides, sorted.
std::vector<std::string> leakage_guard(const GroupedDataset& train, const GroupedDataset& test,
                                       const Catalog& catalog);

/// Class counts per dataset as reported for the archive snapshot the
/// grouping was designed on.
struct ReferenceCount {
  std::string abbrev;
  std::size_t melanoma;
  std::size_t nevus;
};
const std::vector<ReferenceCount>& reference_counts();

struct CountDeviation {
  std::string abbrev;
  std::optional<ClassCounts> observed;
  ClassCounts expected;
};
std::vector<CountDeviation> compare_with_reference(const std::vector<GroupedDataset>& groups);

nlohmann::json to_json(const GroupedDataset& group);
GroupedDataset group_from_json(const nlohmann::json& j);
nlohmann::json groups_to_json(const std::vector<GroupedDataset>& groups);
std::vector<GroupedDataset> groups_from_json(const nlohmann::json& j);

}  // namespace dshift
