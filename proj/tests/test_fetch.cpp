#include <doctest.h>

#include <atomic>
#include <thread>

#include <httplib.h>

#include "dshift/fetch.hpp"
#include "dshift/report.hpp"
#include "test_util.hpp"

using namespace dshift;
using nlohmann::json;

namespace {

json record(const std::string& id, const std::string& dx, const std::string& attribution) {
  return {{"isic_id", id},
          {"attribution", attribution},
          {"metadata",
           {{"clinical",
             {{"diagnosis", dx}, {"age_approx", 55}, {"anatom_site_general", "anterior torso"}, {"sex", "male"}}}}},
          {"files", {{"full", {{"url", "/img/" + id + ".jpg"}}}}}};
}

/// Archive stand-in: three pages of two records on a loopback port.
class MockArchive {
 public:
  MockArchive() {
    server_.Get(R"(/api/images/page(\d))", [this](const httplib::Request& req, httplib::Response& res) {
      const int page = std::stoi(req.matches[1]);
      ++hits_;
      if (page == fail_page_) {
        res.status = 503;
        return;
      }
      if (drift_) {
        res.set_content(R"({"items": []})", "application/json");
        return;
      }
      json body;
      body["results"] = json::array({record("ISIC_" + std::to_string(10 - 2 * page), "nevus", "ViDIR Group"),
                                     record("ISIC_" + std::to_string(11 - 2 * page), "melanoma",
                                            "Hospital Clinic de Barcelona")});
      body["next"] = page < 3 ? json("/api/images/page" + std::to_string(page + 1)) : json(nullptr);
      res.set_content(body.dump(), "application/json");
    });
    server_.Get(R"(/img/(.+))", [this](const httplib::Request& req, httplib::Response& res) {
      ++image_hits_;
      res.set_content("bytes of " + std::string(req.matches[1]), "image/jpeg");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~MockArchive() {
    server_.stop();
    thread_.join();
  }

  std::string url(const std::string& path) const { return "http://127.0.0.1:" + std::to_string(port_) + path; }

  std::atomic<int> fail_page_{0};
  std::atomic<bool> drift_{false};
  std::atomic<int> hits_{0};
  std::atomic<int> image_hits_{0};

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

FetchConfig config(const MockArchive& mock, const std::filesystem::path& cache) {
  FetchConfig cfg;
  cfg.endpoint = mock.url("/api/images/page1");
  cfg.cache_dir = cache;
  cfg.max_attempts = 3;
  cfg.base_delay = std::chrono::milliseconds(1);
  cfg.max_delay = std::chrono::milliseconds(4);
  cfg.timeout = std::chrono::seconds(5);
  return cfg;
}

}  // namespace

TEST_CASE("three pages of two records give a six-record catalog") {
  MockArchive mock;
  testing::TempDir dir("fetch");
  const auto r = fetch_catalog(config(mock, dir.path()));
  CHECK(r.catalog.size() == 6);
  CHECK(r.pages_downloaded == 3);
  CHECK(r.pages_from_cache == 0);
  const auto& recs = r.catalog.records();
  CHECK(std::is_sorted(recs.begin(), recs.end(),
                       [](const auto& a, const auto& b) { return a.image_id < b.image_id; }));
  const auto* m = r.catalog.find("ISIC_9");
  REQUIRE(m);
  CHECK(m->diagnosis == Diagnosis::Melanoma);
  CHECK(m->origin == Origin::bcn());
  CHECK(m->age_years == 55);
  CHECK(r.catalog.find("ISIC_8")->origin == Origin::ham());
  CHECK(r.image_urls.at("ISIC_9") == "/img/ISIC_9.jpg");
}

TEST_CASE("a warm cache serves offline runs without the network") {
  testing::TempDir dir("fetch");
  FetchConfig cfg;
  {
    MockArchive mock;
    cfg = config(mock, dir.path());
    fetch_catalog(cfg);
  }
  cfg.offline = true;
  const auto r = fetch_catalog(cfg);
  CHECK(r.catalog.size() == 6);
  CHECK(r.pages_downloaded == 0);
  CHECK(r.pages_from_cache == 3);
}

TEST_CASE("offline with a cold cache is a network error") {
  MockArchive mock;
  testing::TempDir dir("fetch");
  auto cfg = config(mock, dir.path());
  cfg.offline = true;
  CHECK_ERROR_KIND(fetch_catalog(cfg), ErrorKind::NetworkError);
  CHECK(mock.hits_ == 0);
}

TEST_CASE("404 fails with a network error after every attempt") {
  MockArchive mock;
  testing::TempDir dir("fetch");
  auto cfg = config(mock, dir.path());
  cfg.endpoint = mock.url("/api/nothing-here");
  CHECK_ERROR_KIND(fetch_catalog(cfg), ErrorKind::NetworkError);
}

TEST_CASE("an interrupted download resumes from the cached pages") {
  MockArchive mock;
  testing::TempDir dir("fetch");
  const auto cfg = config(mock, dir.path());
  mock.fail_page_ = 3;
  CHECK_ERROR_KIND(fetch_catalog(cfg), ErrorKind::NetworkError);
  CHECK(mock.hits_ == 2 + 3);
  mock.fail_page_ = 0;
  mock.hits_ = 0;
  const auto r = fetch_catalog(cfg);
  CHECK(r.catalog.size() == 6);
  CHECK(r.pages_from_cache == 2);
  CHECK(r.pages_downloaded == 1);
  CHECK(mock.hits_ == 1);
}

TEST_CASE("responses without results are schema drift") {
  MockArchive mock;
  testing::TempDir dir("fetch");
  mock.drift_ = true;
  CHECK_ERROR_KIND(fetch_catalog(config(mock, dir.path())), ErrorKind::SchemaDrift);
  CHECK_ERROR_KIND(record_from_json(json{{"metadata", json::object()}}, FieldMapping{}), ErrorKind::SchemaDrift);
}

TEST_CASE("field mapping overrides and origin rules") {
  const auto m = FieldMapping::from_json(json{{"image_id", "id"}, {"origin_rules", json::array({json::array({"Acme", "msk"})})}});
  CHECK(m.image_id == "id");
  CHECK(m.diagnosis == FieldMapping{}.diagnosis);
  const auto r = record_from_json(json{{"id", "X"}, {"attribution", "Acme Clinic"}}, m);
  CHECK(r.image_id == "X");
  CHECK(r.origin == Origin::msk());
  CHECK(r.diagnosis == Diagnosis::Other);
  CHECK_FALSE(r.age_years.has_value());
  const auto other = record_from_json(json{{"id", "Y"}, {"attribution", "Somewhere"}}, m);
  CHECK(other.origin == Origin::other("Somewhere"));
}

TEST_CASE("snapshot pinning keeps manifest ids and reports missing ones") {
  MockArchive mock;
  testing::TempDir dir("fetch");
  auto r = fetch_catalog(config(mock, dir.path()));
  const json groups = json::array({{{"abbrev", "H"}, {"member_ids", {"ISIC_4", "ISIC_5", "ISIC_99"}}}});
  const auto missing = pin_to_snapshot(r, groups);
  CHECK(missing == std::vector<std::string>{"ISIC_99"});
  CHECK(r.catalog.size() == 2);
  CHECK(r.image_urls.size() == 2);
}

TEST_CASE("image download skips files already on disk") {
  MockArchive mock;
  testing::TempDir dir("fetch");
  const auto cfg = config(mock, dir.path());
  const std::map<std::string, std::string> urls = {{"A", mock.url("/img/A.jpg")}, {"B", mock.url("/img/B.jpg")},
                                                    {"C", mock.url("/img/C.jpg")}};
  const auto first = download_images(urls, dir / "images", cfg, 2);
  CHECK(first.downloaded == 3);
  CHECK(read_text(dir / "images" / "B.jpg") == "bytes of B.jpg");
  const auto second = download_images(urls, dir / "images", cfg, 2);
  CHECK(second.downloaded == 0);
  CHECK(second.skipped == 3);
  CHECK(mock.image_hits_ == 3);
}
