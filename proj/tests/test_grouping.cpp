#include <doctest.h>

#include <map>
#include <random>
#include <set>

#include "dshift/grouping.hpp"
#include "test_util.hpp"

using namespace dshift;

namespace {

Catalog random_catalog(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const char* locs[] = {"anterior torso", "back", "head/neck", "face", "palms/soles", "oral/genital", "mystery"};
  std::vector<MetadataRecord> records;
  for (std::size_t i = 0; i < n; ++i) {
    MetadataRecord r;
    r.image_id = "r" + std::to_string(i);
    r.diagnosis = static_cast<Diagnosis>(rng() % 3);
    if (rng() % 10) r.age_years = static_cast<int>(rng() % 90);
    r.localization_raw = locs[rng() % 7];
    const int o = static_cast<int>(rng() % 4);
    r.origin = o == 0 ? Origin::ham() : o == 1 ? Origin::bcn() : o == 2 ? Origin::msk() : Origin::other("D7");
    records.push_back(r);
  }
  return Catalog("random", records);
}

GroupedDataset clone(std::size_t mel, std::size_t nev, const std::string& name = "H") {
  GroupedDataset g;
  g.abbrev = name;
  g.origin = Origin::ham();
  for (std::size_t i = 0; i < mel; ++i) g.add(name + "_m" + std::to_string(i), Diagnosis::Melanoma);
  for (std::size_t i = 0; i < nev; ++i) g.add(name + "_n" + std::to_string(i), Diagnosis::Nevus);
  return g;
}

}  // namespace

TEST_CASE("abbreviations follow the origin letter and leaf") {
  CHECK(abbreviation(Origin::ham(), {AgeCondition::Over30, LocalizationBucket::Body}) == "H");
  CHECK(abbreviation(Origin::bcn(), {AgeCondition::AtMost30, std::nullopt}) == "BA");
  CHECK(abbreviation(Origin::msk(), {AgeCondition::Over30, LocalizationBucket::HeadNeck}) == "MLH");
  CHECK(abbreviation(Origin::bcn(), {AgeCondition::Over30, LocalizationBucket::PalmsSoles}) == "BLP");
  CHECK(abbreviation(Origin::ham(), {AgeCondition::Over30, LocalizationBucket::OralGenital}) == "HLO");
  CHECK(abbreviation(Origin::other("D7"), {AgeCondition::Over30, LocalizationBucket::Body}) == "D7");
}

TEST_CASE("every eligible record lands in exactly one group") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto cat = random_catalog(1000, seed);
    const auto groups = apply_grouping(cat, Origin::ham(), LocalizationMap::default_map());
    std::map<std::string, int> seen;
    for (const auto& g : groups) {
      CHECK(g.member_ids.size() == g.member_classes.size());
      CHECK(g.class_counts.total() == g.size());
      for (const auto& id : g.member_ids) ++seen[id];
    }
    for (const auto& r : cat.records()) {
      const bool eligible = r.diagnosis != Diagnosis::Other && r.age_years &&
                            LocalizationMap::default_map().lookup(r.localization_raw) != LocalizationBucket::Unknown;
      CHECK_MESSAGE(seen[r.image_id] == (eligible ? 1 : 0), r.image_id);
    }
  }
}

TEST_CASE("members satisfy their group's rule") {
  const auto cat = random_catalog(1000, 9);
  const auto& map = LocalizationMap::default_map();
  for (const auto& g : apply_grouping(cat, Origin::ham(), map)) {
    for (std::size_t i = 0; i < g.size(); ++i) {
      const auto* r = cat.find(g.member_ids[i]);
      REQUIRE(r);
      CHECK(r->origin == g.origin);
      CHECK(r->diagnosis == g.member_classes[i]);
      if (g.rule.age == AgeCondition::AtMost30) {
        CHECK(*r->age_years <= 30);
      } else {
        CHECK(*r->age_years > 30);
        CHECK(map.lookup(r->localization_raw) == *g.rule.bucket);
      }
    }
  }
}

TEST_CASE("flag matrix matches the grouping table") {
  const std::map<std::string, ShiftFlags> expected = {
      {"H", {false, false}},  {"HA", {true, false}}, {"HLH", {true, false}}, {"HLP", {true, false}},
      {"B", {false, true}},   {"BA", {true, true}},  {"BLH", {true, true}},  {"BLP", {true, true}},
      {"M", {false, true}},   {"MA", {true, true}},  {"MLH", {true, true}},
  };
  const auto groups = apply_grouping(random_catalog(1000, 4), Origin::ham(), LocalizationMap::default_map());
  std::size_t matched = 0;
  for (const auto& g : groups) {
    if (auto it = expected.find(g.abbrev); it != expected.end()) {
      CHECK_MESSAGE(g.flags == it->second, g.abbrev);
      ++matched;
    }
  }
  CHECK(matched == expected.size());
}

TEST_CASE("exclusion boundary: 200 is removed, 201 is kept") {
  auto res = exclude_small({clone(100, 100, "A"), clone(100, 101, "B")});
  REQUIRE(res.kept.size() == 1);
  REQUIRE(res.removed.size() == 1);
  CHECK(res.kept[0].abbrev == "B");
  CHECK(res.removed[0].abbrev == "A");
}

TEST_CASE("empty catalog yields empty groups; missing source origin is an error") {
  const auto groups = apply_grouping(Catalog{}, Origin::ham(), LocalizationMap::default_map());
  CHECK(groups.size() == 15);
  for (const auto& g : groups) CHECK(g.size() == 0);
  const auto cat = parse_catalog("image_id,diagnosis,age_years,localization,origin\na,nevus,40,back,BCN\n", "x");
  CHECK_ERROR_KIND(apply_grouping(cat, Origin::ham(), LocalizationMap::default_map()), ErrorKind::UnknownOrigin);
}

TEST_CASE("stratified split of a 465:4234 clone gives 372:3387 and 93:847") {
  const auto split = stratified_split(clone(465, 4234), {0.8, 17, false});
  CHECK(split.train.class_counts == ClassCounts{372, 3387});
  CHECK(split.holdout.class_counts == ClassCounts{93, 847});
  CHECK(split.train.abbrev == "H_train");
  CHECK(split.holdout.abbrev == "H_holdout");
}

TEST_CASE("small split oracle 5:7") {
  const auto split = stratified_split(clone(5, 7), {0.8, 1, false});
  CHECK(split.train.class_counts == ClassCounts{4, 5});
  CHECK(split.holdout.class_counts == ClassCounts{1, 2});
}

TEST_CASE("split is a partition, deterministic, and independent of member order") {
  const auto g = clone(40, 60);
  const auto a = stratified_split(g, {0.8, 5, false});
  const auto b = stratified_split(g, {0.8, 5, false});
  CHECK(a.train.member_ids == b.train.member_ids);
  std::set<std::string> all(a.train.member_ids.begin(), a.train.member_ids.end());
  for (const auto& id : a.holdout.member_ids) CHECK(all.insert(id).second);
  CHECK(all.size() == g.size());

  GroupedDataset reversed;
  reversed.abbrev = g.abbrev;
  for (std::size_t i = g.size(); i-- > 0;) reversed.add(g.member_ids[i], g.member_classes[i]);
  const auto c = stratified_split(reversed, {0.8, 5, false});
  std::set<std::string> ta(a.train.member_ids.begin(), a.train.member_ids.end());
  std::set<std::string> tc(c.train.member_ids.begin(), c.train.member_ids.end());
  CHECK(ta == tc);

  const auto d = stratified_split(g, {0.8, 6, false});
  CHECK(d.train.member_ids != a.train.member_ids);
}

TEST_CASE("split needs two images per class") {
  CHECK_ERROR_KIND(stratified_split(clone(1, 10), {0.8, 0, false}), ErrorKind::ClassTooSmall);
}

TEST_CASE("lesion-aware split keeps lesions on one side") {
  std::vector<MetadataRecord> records;
  GroupedDataset g;
  g.abbrev = "H";
  for (int i = 0; i < 300; ++i) {
    MetadataRecord r;
    r.image_id = "i" + std::to_string(i);
    r.lesion_id = "L" + std::to_string(i / 3);
    r.diagnosis = (i / 3) % 4 == 0 ? Diagnosis::Melanoma : Diagnosis::Nevus;
    records.push_back(r);
    g.add(r.image_id, r.diagnosis);
  }
  const Catalog cat("x", records);
  const auto plain = stratified_split(g, {0.8, 2, false});
  CHECK_FALSE(leakage_guard(plain.train, plain.holdout, cat).empty());
  const auto aware = stratified_split(g, {0.8, 2, true}, cat);
  CHECK(leakage_guard(aware.train, aware.holdout, cat).empty());
  CHECK(aware.train.size() + aware.holdout.size() == g.size());
  // 75 melanoma images in clusters of three: the floor target 60 is reachable.
  CHECK(aware.train.class_counts.melanoma == 60);
}

TEST_CASE("group manifest JSON round-trips") {
  auto groups = apply_grouping(random_catalog(300, 8), Origin::bcn(), LocalizationMap::default_map());
  const auto back = groups_from_json(groups_to_json(groups));
  REQUIRE(back.size() == groups.size());
  for (std::size_t i = 0; i < groups.size(); ++i) {
    CHECK(back[i].abbrev == groups[i].abbrev);
    CHECK(back[i].origin == groups[i].origin);
    CHECK(back[i].rule == groups[i].rule);
    CHECK(back[i].flags == groups[i].flags);
    CHECK(back[i].class_counts == groups[i].class_counts);
    CHECK(back[i].member_ids == groups[i].member_ids);
    CHECK(back[i].member_classes == groups[i].member_classes);
  }
  CHECK_ERROR_KIND(groups_from_json(nlohmann::json::object()), ErrorKind::MalformedJson);
}

TEST_CASE("reference comparison reports only deviations") {
  std::vector<GroupedDataset> groups;
  for (const auto& r : reference_counts()) groups.push_back(clone(r.melanoma, r.nevus, r.abbrev));
  CHECK(compare_with_reference(groups).empty());
  groups[0] = clone(400, 4234, "H");
  groups.pop_back();
  const auto dev = compare_with_reference(groups);
  REQUIRE(dev.size() == 2);
  CHECK(dev[0].abbrev == "H");
  CHECK(dev[0].observed->melanoma == 400);
  CHECK_FALSE(dev[1].observed.has_value());
}

TEST_CASE("six-record toy catalog lands in the expected leaves") {
  const auto cat = parse_catalog(
      "image_id,diagnosis,age_years,localization,origin\n"
      "r1,melanoma,45,anterior torso,HAM\n"
      "r2,nevus,25,anterior torso,HAM\n"
      "r3,nevus,50,head/neck,HAM\n"
      "r4,melanoma,40,palms/soles,BCN\n"
      "r5,nevus,33,upper extremity,MSK\n"
      "r6,melanoma,60,oral/genital,HAM\n",
      "toy");
  std::map<std::string, std::vector<std::string>> members;
  for (const auto& g : apply_grouping(cat, Origin::ham(), LocalizationMap::default_map())) {
    if (g.size()) members[g.abbrev] = g.member_ids;
  }
  const std::map<std::string, std::vector<std::string>> expected = {
      {"H", {"r1"}}, {"HA", {"r2"}}, {"HLH", {"r3"}}, {"BLP", {"r4"}}, {"M", {"r5"}}, {"HLO", {"r6"}}};
  CHECK(members == expected);
}

TEST_CASE("exclusion keeps 218 and drops 34") {
  const auto res = exclude_small({clone(15, 203, "HLP"), clone(19, 15, "HLO")});
  REQUIRE(res.kept.size() == 1);
  CHECK(res.kept[0].abbrev == "HLP");
  CHECK(res.removed[0].abbrev == "HLO");
}

TEST_CASE("10:10 splits into 8:8 and 2:2") {
  const auto split = stratified_split(clone(10, 10), {0.8, 3, false});
  CHECK(split.train.class_counts == ClassCounts{8, 8});
  CHECK(split.holdout.class_counts == ClassCounts{2, 2});
}
