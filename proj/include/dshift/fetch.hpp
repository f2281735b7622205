#pragma once

#include <chrono>
#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dshift/metadata.hpp"

namespace dshift {

/// Where each catalog field lives in an archive record, as dotted paths.
/// Kept in configuration so schema changes on the archive side can be
/// absorbed without code changes.
struct FieldMapping {
  std::string image_id = "isic_id";
  std::string lesion_id = "metadata.clinical.lesion_id";
  std::string diagnosis = "metadata.clinical.diagnosis";
  std::string age = "metadata.clinical.age_approx";
  std::string localization = "metadata.clinical.anatom_site_general";
  std::string sex = "metadata.clinical.sex";
  std::string origin = "attribution";
  std::string image_url = "files.full.url";
  /// Substring of the origin field -> origin name; first match wins, and
  /// unmatched values become Other(value).
  std::vector<std::pair<std::string, std::string>> origin_rules = {
      {"ViDIR", "ham"},
      {"HAM10000", "ham"},
      {"Hospital Cl", "bcn"},
      {"BCN", "bcn"},
      {"Memorial Sloan", "msk"},
      {"MSK", "msk"},
  };

  /// Overrides any keys present in a JSON object with the same names.
  static FieldMapping from_json(const nlohmann::json& j);
};

struct FetchConfig {
  std::string endpoint;                         // first page URL
  std::map<std::string, std::string> filter;    // extra query parameters
  std::filesystem::path cache_dir;
  std::size_t max_attempts = 5;
  std::chrono::milliseconds base_delay{500};
  std::chrono::milliseconds max_delay{8000};
  std::chrono::seconds timeout{30};
  bool offline = false;                         // cache only
  FieldMapping mapping;
};

struct FetchResult {
  Catalog catalog;                              // records sorted by image_id
  std::map<std::string, std::string> image_urls;
  std::size_t pages_downloaded = 0;
  std::size_t pages_from_cache = 0;
};

/// Downloads every page of `{"results": [...], "next": url | null}`
/// responses. Pages are stored in the cache as they arrive, so an
/// interrupted download resumes where it stopped and a completed one is
/// served without network access. Throws NetworkError once retries are
/// exhausted and SchemaDrift when a page or record lacks a required field.
FetchResult fetch_catalog(const FetchConfig& cfg);

/// Converts one archive record. Throws SchemaDrift if the id is missing.
MetadataRecord record_from_json(const nlohmann::json& record, const FieldMapping& mapping);

/// Keeps the records whose ids appear in a group manifest; returns the ids
/// that were pinned but not found.
std::vector<std::string> pin_to_snapshot(FetchResult& result, const nlohmann::json& groups);

struct ImageDownload {
  std::size_t downloaded = 0;
  std::size_t skipped = 0;  // already on disk
};

/// Fetches `<id><ext>` files into `dir` with at most `concurrency`
/// requests in flight. Existing files are left alone.
ImageDownload download_images(const std::map<std::string, std::string>& urls,
                              const std::filesystem::path& dir, const FetchConfig& cfg,
                              std::size_t concurrency = 4);

}  // namespace dshift
