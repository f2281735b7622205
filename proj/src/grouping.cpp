#include "dshift/grouping.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <unordered_map>

#include "dshift/error.hpp"
#include "dshift/rng.hpp"

namespace dshift {

using nlohmann::json;

std::vector<std::string> GroupedDataset::ids_of(Diagnosis cls) const {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < member_ids.size(); ++i) {
    if (member_classes[i] == cls) out.push_back(member_ids[i]);
  }
  return out;
}

void GroupedDataset::add(std::string id, Diagnosis cls) {
  member_ids.push_back(std::move(id));
  member_classes.push_back(cls);
  if (cls == Diagnosis::Melanoma) {
    ++class_counts.melanoma;
  } else if (cls == Diagnosis::Nevus) {
    ++class_counts.nevus;
  }
}

std::string abbreviation(const Origin& origin, const GroupRule& rule) {
  std::string prefix;
  switch (origin.kind) {
    case Origin::Kind::HAM: prefix = "H"; break;
    case Origin::Kind::BCN: prefix = "B"; break;
    case Origin::Kind::MSK: prefix = "M"; break;
    case Origin::Kind::Other: prefix = origin.name.empty() ? "X" : origin.name; break;
  }
  if (rule.age == AgeCondition::AtMost30) return prefix + "A";
  switch (rule.bucket.value_or(LocalizationBucket::Unknown)) {
    case LocalizationBucket::Body: return prefix;
    case LocalizationBucket::HeadNeck: return prefix + "LH";
    case LocalizationBucket::PalmsSoles: return prefix + "LP";
    case LocalizationBucket::OralGenital: return prefix + "LO";
    case LocalizationBucket::Unknown: break;
  }
  return prefix + "L?";
}

ShiftFlags shift_flags(const Origin& origin, const GroupRule& rule, const Origin& source_origin) {
  ShiftFlags flags;
  flags.technical = origin != source_origin;
  flags.biological =
      !(rule.age == AgeCondition::Over30 && rule.bucket == LocalizationBucket::Body);
  return flags;
}

namespace {

const std::vector<GroupRule>& leaf_rules() {
  static const std::vector<GroupRule> rules = {
      {AgeCondition::Over30, LocalizationBucket::Body},
      {AgeCondition::AtMost30, std::nullopt},
      {AgeCondition::Over30, LocalizationBucket::HeadNeck},
      {AgeCondition::Over30, LocalizationBucket::PalmsSoles},
      {AgeCondition::Over30, LocalizationBucket::OralGenital},
  };
  return rules;
}

// Index into leaf_rules() for an eligible record, or -1.
int leaf_for(int age, LocalizationBucket bucket) {
  if (bucket == LocalizationBucket::Unknown) return -1;
  if (age <= 30) return 1;
  switch (bucket) {
    case LocalizationBucket::Body: return 0;
    case LocalizationBucket::HeadNeck: return 2;
    case LocalizationBucket::PalmsSoles: return 3;
    case LocalizationBucket::OralGenital: return 4;
    case LocalizationBucket::Unknown: break;
  }
  return -1;
}

}  // namespace

std::vector<GroupedDataset> apply_grouping(const Catalog& catalog, const Origin& source_origin,
                                           const LocalizationMap& map) {
  std::set<Origin> origins = {Origin::ham(), Origin::bcn(), Origin::msk()};
  bool source_present = false;
  for (const auto& r : catalog.records()) {
    origins.insert(r.origin);
    source_present = source_present || r.origin == source_origin;
  }
  if (!catalog.empty() && !source_present) {
    throw Error(ErrorKind::UnknownOrigin,
                "source origin '" + source_origin.str() + "' not present in catalog",
                {source_origin.str()});
  }

  std::vector<GroupedDataset> groups;
  std::map<Origin, std::size_t> first_group;
  for (const auto& origin : origins) {
    first_group[origin] = groups.size();
    for (const auto& rule : leaf_rules()) {
      GroupedDataset g;
      g.origin = origin;
      g.rule = rule;
      g.abbrev = abbreviation(origin, rule);
      g.flags = shift_flags(origin, rule, source_origin);
      groups.push_back(std::move(g));
    }
  }

  for (const auto& r : catalog.records()) {
    if (r.diagnosis == Diagnosis::Other || !r.age_years) continue;
    const int leaf = leaf_for(*r.age_years, map.lookup(r.localization_raw));
    if (leaf < 0) continue;
    groups[first_group[r.origin] + static_cast<std::size_t>(leaf)].add(r.image_id, r.diagnosis);
  }
  return groups;
}

Exclusion exclude_small(std::vector<GroupedDataset> groups, std::size_t min_total) {
  Exclusion out;
  for (auto& g : groups) {
    if (g.size() <= min_total) {
      out.removed.push_back(std::move(g));
    } else {
      out.kept.push_back(std::move(g));
    }
  }
  return out;
}

namespace {

struct Cluster {
  std::uint64_t key;
  std::string tiebreak;
  Diagnosis cls;
  std::vector<std::size_t> members;  // indices into the group
};

Split split_clusters(const GroupedDataset& group, const SplitSpec& spec,
                     std::vector<Cluster> clusters) {
  if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0)) {
    throw Error(ErrorKind::InvalidArgument, "train_fraction must lie in (0, 1)");
  }
  for (auto cls : {Diagnosis::Melanoma, Diagnosis::Nevus}) {
    if (group.class_counts.of(cls) < 2) {
      throw Error(ErrorKind::ClassTooSmall,
                  "group " + group.abbrev + " has fewer than 2 " + std::string(to_string(cls)) +
                      " images",
                  {group.abbrev});
    }
  }
  std::sort(clusters.begin(), clusters.end(), [](const Cluster& a, const Cluster& b) {
    return a.key != b.key ? a.key < b.key : a.tiebreak < b.tiebreak;
  });

  std::vector<bool> to_train(group.size(), false);
  for (auto cls : {Diagnosis::Melanoma, Diagnosis::Nevus}) {
    const std::size_t n = group.class_counts.of(cls);
    const auto target = static_cast<std::size_t>(
        std::floor(spec.train_fraction * static_cast<double>(n) + 1e-9));
    std::size_t filled = 0;
    for (const auto& c : clusters) {
      if (c.cls != cls || filled + c.members.size() > target) continue;
      for (auto m : c.members) to_train[m] = true;
      filled += c.members.size();
      if (filled == target) break;
    }
  }

  Split split;
  for (auto* part : {&split.train, &split.holdout}) {
    part->origin = group.origin;
    part->rule = group.rule;
    part->flags = group.flags;
  }
  split.train.abbrev = group.abbrev + "_train";
  split.holdout.abbrev = group.abbrev + "_holdout";
  for (std::size_t i = 0; i < group.size(); ++i) {
    (to_train[i] ? split.train : split.holdout).add(group.member_ids[i], group.member_classes[i]);
  }
  return split;
}

std::uint64_t shuffle_key(std::uint64_t seed, std::string_view id) {
  return derive_seed(seed, fnv1a64(id));
}

}  // namespace

Split stratified_split(const GroupedDataset& group, const SplitSpec& spec) {
  std::vector<Cluster> clusters;
  clusters.reserve(group.size());
  for (std::size_t i = 0; i < group.size(); ++i) {
    clusters.push_back({shuffle_key(spec.seed, group.member_ids[i]), group.member_ids[i],
                        group.member_classes[i], {i}});
  }
  return split_clusters(group, spec, std::move(clusters));
}

Split stratified_split(const GroupedDataset& group, const SplitSpec& spec, const Catalog& catalog) {
  if (!spec.lesion_aware) return stratified_split(group, spec);
  // Clusters are keyed by (lesion id, class); a lesion recorded under both
  // classes still yields one cluster per class.
  std::map<std::pair<std::string, Diagnosis>, std::size_t> by_lesion;
  std::vector<Cluster> clusters;
  for (std::size_t i = 0; i < group.size(); ++i) {
    const auto* rec = catalog.find(group.member_ids[i]);
    const auto cls = group.member_classes[i];
    if (rec && rec->lesion_id) {
      auto [it, inserted] = by_lesion.try_emplace({*rec->lesion_id, cls}, clusters.size());
      if (inserted) {
        clusters.push_back({shuffle_key(spec.seed, "lesion:" + *rec->lesion_id),
                            "lesion:" + *rec->lesion_id, cls, {}});
      }
      clusters[it->second].members.push_back(i);
    } else {
      clusters.push_back({shuffle_key(spec.seed, group.member_ids[i]), group.member_ids[i], cls, {i}});
    }
  }
  return split_clusters(group, spec, std::move(clusters));
}

std::vector<std::string> leakage_guard(const GroupedDataset& train, const GroupedDataset& test,
                                       const Catalog& catalog) {
  std::set<std::string> train_lesions;
  for (const auto& id : train.member_ids) {
    if (const auto* r = catalog.find(id); r && r->lesion_id) train_lesions.insert(*r->lesion_id);
  }
  std::set<std::string> violations;
  for (const auto& id : test.member_ids) {
    if (const auto* r = catalog.find(id); r && r->lesion_id && train_lesions.count(*r->lesion_id)) {
      violations.insert(*r->lesion_id);
    }
  }
  return {violations.begin(), violations.end()};
}

const std::vector<ReferenceCount>& reference_counts() {
  static const std::vector<ReferenceCount> counts = {
      {"H", 465, 4234},  {"HA", 25, 532},  {"HLH", 99, 121},  {"HLP", 15, 203},
      {"B", 1918, 2721}, {"BA", 71, 808},  {"BLH", 612, 320}, {"BLP", 192, 105},
      {"M", 565, 1282},  {"MA", 37, 427},  {"MLH", 175, 117},
  };
  return counts;
}

std::vector<CountDeviation> compare_with_reference(const std::vector<GroupedDataset>& groups) {
  std::vector<CountDeviation> out;
  for (const auto& ref : reference_counts()) {
    const ClassCounts expected{ref.melanoma, ref.nevus};
    auto it = std::find_if(groups.begin(), groups.end(),
                           [&](const GroupedDataset& g) { return g.abbrev == ref.abbrev; });
    if (it == groups.end()) {
      out.push_back({ref.abbrev, std::nullopt, expected});
    } else if (it->class_counts != expected) {
      out.push_back({ref.abbrev, it->class_counts, expected});
    }
  }
  return out;
}

json to_json(const GroupedDataset& g) {
  json classes = json::array();
  for (auto c : g.member_classes) classes.push_back(to_string(c));
  return json{
      {"abbrev", g.abbrev},
      {"origin", g.origin.str()},
      {"rule",
       {{"age", g.rule.age == AgeCondition::AtMost30 ? "<=30" : ">30"},
        {"localization", g.rule.bucket ? std::string(to_string(*g.rule.bucket)) : "all"}}},
      {"flags", {{"biological_shift", g.flags.biological}, {"technical_shift", g.flags.technical}}},
      {"class_counts",
       {{"melanoma", g.class_counts.melanoma},
        {"nevus", g.class_counts.nevus},
        {"total", g.class_counts.total()}}},
      {"member_ids", g.member_ids},
      {"member_classes", classes},
  };
}

GroupedDataset group_from_json(const json& j) {
  try {
    GroupedDataset g;
    g.abbrev = j.at("abbrev").get<std::string>();
    g.origin = Origin::parse(j.at("origin").get<std::string>());
    const auto& rule = j.at("rule");
    g.rule.age = rule.at("age").get<std::string>() == "<=30" ? AgeCondition::AtMost30
                                                              : AgeCondition::Over30;
    const auto loc = rule.at("localization").get<std::string>();
    g.rule.bucket = loc == "all" ? std::nullopt : parse_bucket(loc);
    g.flags.biological = j.at("flags").at("biological_shift").get<bool>();
    g.flags.technical = j.at("flags").at("technical_shift").get<bool>();
    const auto ids = j.at("member_ids").get<std::vector<std::string>>();
    const auto classes = j.at("member_classes").get<std::vector<std::string>>();
    if (ids.size() != classes.size()) {
      throw Error(ErrorKind::LengthMismatch, "member_ids and member_classes differ in length");
    }
    for (std::size_t i = 0; i < ids.size(); ++i) g.add(ids[i], parse_diagnosis(classes[i]));
    const ClassCounts declared{j.at("class_counts").at("melanoma").get<std::size_t>(),
                               j.at("class_counts").at("nevus").get<std::size_t>()};
    if (declared != g.class_counts) {
      throw Error(ErrorKind::MalformedJson, "class_counts do not match members of " + g.abbrev);
    }
    return g;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::MalformedJson, std::string("invalid group manifest: ") + e.what());
  }
}

json groups_to_json(const std::vector<GroupedDataset>& groups) {
  json arr = json::array();
  for (const auto& g : groups) arr.push_back(to_json(g));
  return arr;
}

std::vector<GroupedDataset> groups_from_json(const json& j) {
  if (!j.is_array()) throw Error(ErrorKind::MalformedJson, "group manifest must be a JSON array");
  std::vector<GroupedDataset> out;
  for (const auto& item : j) out.push_back(group_from_json(item));
  return out;
}

}  // namespace dshift
