#include "dshift/fetch.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <regex>
#include <set>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <spdlog/spdlog.h>

#include "dshift/csv.hpp"
#include "dshift/error.hpp"
#include "dshift/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace dshift {

namespace {

struct UrlParts {
  std::string origin;  // scheme://host[:port]
  std::string target;  // path and query
};

UrlParts split_url(const std::string& url) {
  static const std::regex re(R"(^(https?://[^/?#]+)([^#]*))", std::regex::icase);
  std::smatch m;
  if (!std::regex_search(url, m, re)) {
    throw Error(ErrorKind::Config, "not an http(s) URL: " + url);
  }
  UrlParts parts{m[1].str(), m[2].str()};
  if (parts.target.empty()) parts.target = "/";
  return parts;
}

std::string percent_encode(std::string_view s) {
  std::string out;
  for (unsigned char c : s) {
    if (std::isalnum(c) || c == '-' || c == '_' || c == '.' || c == '~') {
      out.push_back(static_cast<char>(c));
    } else {
      char buf[4];
      std::snprintf(buf, sizeof buf, "%%%02X", c);
      out += buf;
    }
  }
  return out;
}

std::string with_filter(const std::string& endpoint, const std::map<std::string, std::string>& filter) {
  std::string url = endpoint;
  char sep = url.find('?') == std::string::npos ? '?' : '&';
  for (const auto& [k, v] : filter) {
    url += sep;
    url += percent_encode(k) + "=" + percent_encode(v);
    sep = '&';
  }
  return url;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const fs::path& p, std::string_view bytes) {
  const fs::path tmp = p.string() + ".part";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::Io, "cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorKind::Io, "write failed for " + tmp.string());
  }
  fs::rename(tmp, p);
}

std::unique_ptr<httplib::Client> make_client(const std::string& origin, const FetchConfig& cfg) {
  auto client = std::make_unique<httplib::Client>(origin);
  client->set_connection_timeout(cfg.timeout);
  client->set_read_timeout(cfg.timeout);
  client->set_follow_location(true);
  return client;
}

/// GET with capped exponential backoff. Every failure, including HTTP
/// error statuses, is retried until the attempts run out.
std::string get_with_retry(const std::string& url, const FetchConfig& cfg) {
  const auto parts = split_url(url);
  auto client = make_client(parts.origin, cfg);
  std::string last_error;
  const std::size_t attempts = std::max<std::size_t>(cfg.max_attempts, 1);
  for (std::size_t attempt = 0; attempt < attempts; ++attempt) {
    if (attempt > 0) {
      std::chrono::milliseconds delay = cfg.base_delay * (1LL << std::min<std::size_t>(attempt - 1, 20));
      delay = std::min(delay, cfg.max_delay);
      std::this_thread::sleep_for(delay);
    }
    auto res = client->Get(parts.target);
    if (!res) {
      last_error = httplib::to_string(res.error());
    } else if (res->status == 200) {
      return res->body;
    } else {
      last_error = "HTTP " + std::to_string(res->status);
    }
    spdlog::warn("GET {} failed ({}), attempt {}/{}", url, last_error, attempt + 1, attempts);
  }
  throw Error(ErrorKind::NetworkError, "GET " + url + " failed after " + std::to_string(attempts) +
                                           " attempts: " + last_error);
}

const json* lookup(const json& j, std::string_view path) {
  const json* cur = &j;
  std::size_t start = 0;
  while (start <= path.size()) {
    const std::size_t dot = path.find('.', start);
    const std::string key(path.substr(start, dot == std::string_view::npos ? std::string_view::npos : dot - start));
    if (!cur->is_object()) return nullptr;
    auto it = cur->find(key);
    if (it == cur->end()) return nullptr;
    cur = &*it;
    if (dot == std::string_view::npos) break;
    start = dot + 1;
  }
  return cur;
}

std::optional<std::string> string_at(const json& j, std::string_view path) {
  const json* v = lookup(j, path);
  if (!v || v->is_null()) return std::nullopt;
  if (v->is_string()) return v->get<std::string>();
  return v->dump();
}

json page_json(std::string_view body, const std::string& where) {
  json page;
  try {
    page = json::parse(body);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::SchemaDrift, where + ": response is not JSON: " + e.what());
  }
  if (!page.is_object() || !page.contains("results") || !page["results"].is_array()) {
    throw Error(ErrorKind::SchemaDrift, where + ": response has no \"results\" array");
  }
  return page;
}

std::optional<std::string> next_url(const json& page, const std::string& current) {
  auto it = page.find("next");
  if (it == page.end() || it->is_null()) return std::nullopt;
  if (!it->is_string()) throw Error(ErrorKind::SchemaDrift, "\"next\" is neither a URL nor null");
  std::string next = it->get<std::string>();
  if (next.empty()) return std::nullopt;
  if (next.front() == '/') next = split_url(current).origin + next;
  return next;
}

}  // namespace

FieldMapping FieldMapping::from_json(const json& j) {
  FieldMapping m;
  if (!j.is_object()) throw Error(ErrorKind::Config, "field mapping must be a JSON object");
  auto take = [&](const char* key, std::string& field) {
    if (j.contains(key)) field = j.at(key).get<std::string>();
  };
  take("image_id", m.image_id);
  take("lesion_id", m.lesion_id);
  take("diagnosis", m.diagnosis);
  take("age", m.age);
  take("localization", m.localization);
  take("sex", m.sex);
  take("origin", m.origin);
  take("image_url", m.image_url);
  if (j.contains("origin_rules")) {
    m.origin_rules.clear();
    for (const auto& rule : j.at("origin_rules")) {
      m.origin_rules.emplace_back(rule.at(0).get<std::string>(), rule.at(1).get<std::string>());
    }
  }
  return m;
}

MetadataRecord record_from_json(const json& record, const FieldMapping& mapping) {
  MetadataRecord r;
  auto id = string_at(record, mapping.image_id);
  if (!id || id->empty()) {
    throw Error(ErrorKind::SchemaDrift, "record without field \"" + mapping.image_id + "\"");
  }
  r.image_id = *id;
  r.lesion_id = string_at(record, mapping.lesion_id);
  r.diagnosis = parse_diagnosis(string_at(record, mapping.diagnosis).value_or(""));
  if (const json* age = lookup(record, mapping.age); age && age->is_number()) {
    const double a = age->get<double>();
    if (a >= 0 && a <= 120) r.age_years = static_cast<int>(a);
  }
  r.localization_raw = string_at(record, mapping.localization).value_or("");
  const std::string sex = csv::to_lower(csv::trim(string_at(record, mapping.sex).value_or("")));
  if (sex == "male") r.sex = Sex::Male;
  if (sex == "female") r.sex = Sex::Female;
  const std::string origin = string_at(record, mapping.origin).value_or("");
  r.origin = Origin::other(origin);
  for (const auto& [needle, name] : mapping.origin_rules) {
    if (origin.find(needle) != std::string::npos) {
      r.origin = Origin::parse(name);
      break;
    }
  }
  return r;
}

FetchResult fetch_catalog(const FetchConfig& cfg) {
  if (cfg.endpoint.empty()) throw Error(ErrorKind::Config, "fetch needs an endpoint");
  const std::string first = with_filter(cfg.endpoint, cfg.filter);
  const fs::path dir = cfg.cache_dir / ("catalog-" + hex64(fnv1a64(first)));
  fs::create_directories(dir);
  const fs::path state_path = dir / "state.json";

  auto page_path = [&](std::size_t i) {
    char name[32];
    std::snprintf(name, sizeof name, "page_%05zu.json", i);
    return dir / name;
  };

  json state = {{"endpoint", first}, {"pages", 0}, {"next", first}, {"complete", false}};
  if (fs::exists(state_path)) {
    try {
      state = json::parse(read_file(state_path));
    } catch (const json::exception&) {
      spdlog::warn("ignoring unreadable fetch state in {}", dir.string());
    }
  }

  FetchResult result;
  std::vector<json> pages;
  const std::size_t cached = state.value("pages", std::size_t{0});
  for (std::size_t i = 0; i < cached; ++i) {
    pages.push_back(page_json(read_file(page_path(i)), page_path(i).string()));
    ++result.pages_from_cache;
  }

  std::optional<std::string> next;
  if (!state.value("complete", false) && state["next"].is_string()) next = state["next"].get<std::string>();
  if (next && cfg.offline) {
    throw Error(ErrorKind::NetworkError, "offline and the cached catalog is incomplete");
  }
  while (next) {
    const std::string url = *next;
    const std::string body = get_with_retry(url, cfg);
    json page = page_json(body, url);
    next = next_url(page, url);
    write_file_atomic(page_path(pages.size()), body);
    pages.push_back(std::move(page));
    ++result.pages_downloaded;
    state["pages"] = pages.size();
    state["next"] = next ? json(*next) : json(nullptr);
    state["complete"] = !next.has_value();
    write_file_atomic(state_path, state.dump(2));
    spdlog::info("fetched page {} ({} records)", pages.size(), pages.back()["results"].size());
  }

  std::vector<MetadataRecord> records;
  for (const auto& page : pages) {
    for (const auto& item : page["results"]) {
      records.push_back(record_from_json(item, cfg.mapping));
      if (auto url = string_at(item, cfg.mapping.image_url)) result.image_urls[records.back().image_id] = *url;
    }
  }
  std::stable_sort(records.begin(), records.end(),
                   [](const MetadataRecord& a, const MetadataRecord& b) { return a.image_id < b.image_id; });
  result.catalog = Catalog("archive", std::move(records));
  return result;
}

std::vector<std::string> pin_to_snapshot(FetchResult& result, const json& groups) {
  std::set<std::string> pinned;
  const json& list = groups.is_object() && groups.contains("groups") ? groups["groups"] : groups;
  if (!list.is_array()) throw Error(ErrorKind::MalformedJson, "snapshot must be a group manifest");
  for (const auto& g : list) {
    for (const auto& id : g.at("member_ids")) pinned.insert(id.get<std::string>());
  }
  std::vector<MetadataRecord> kept;
  std::set<std::string> found;
  for (const auto& r : result.catalog.records()) {
    if (pinned.count(r.image_id)) {
      kept.push_back(r);
      found.insert(r.image_id);
    }
  }
  for (auto it = result.image_urls.begin(); it != result.image_urls.end();) {
    it = pinned.count(it->first) ? std::next(it) : result.image_urls.erase(it);
  }
  result.catalog = Catalog(result.catalog.source_name(), std::move(kept));
  std::vector<std::string> missing;
  std::set_difference(pinned.begin(), pinned.end(), found.begin(), found.end(), std::back_inserter(missing));
  return missing;
}

ImageDownload download_images(const std::map<std::string, std::string>& urls, const fs::path& dir,
                              const FetchConfig& cfg, std::size_t concurrency) {
  fs::create_directories(dir);
  std::vector<std::pair<std::string, std::string>> jobs(urls.begin(), urls.end());
  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> downloaded{0}, skipped{0};
  std::mutex error_mutex;
  std::optional<Error> first_error;

  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      const auto& [id, url] = jobs[i];
      std::string ext = fs::path(split_url(url).target.substr(0, split_url(url).target.find('?'))).extension().string();
      if (ext.empty()) ext = ".jpg";
      const fs::path target = dir / (id + ext);
      if (fs::exists(target)) {
        ++skipped;
        continue;
      }
      try {
        write_file_atomic(target, get_with_retry(url, cfg));
        ++downloaded;
      } catch (const Error& e) {
        std::lock_guard lock(error_mutex);
        if (!first_error) first_error = e;
        return;
      }
    }
  };
  std::vector<std::thread> threads;
  for (std::size_t t = 0; t < std::max<std::size_t>(concurrency, 1); ++t) threads.emplace_back(worker);
  for (auto& t : threads) t.join();
  if (first_error) throw *first_error;
  return {downloaded.load(), skipped.load()};
}

}  // namespace dshift
