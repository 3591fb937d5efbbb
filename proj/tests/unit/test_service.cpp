#include <set>
#include <thread>

#include "doctest.h"
#include "fixtures.hpp"
#include "helpers.hpp"
#include "httplib.h"

using namespace esp;

namespace {

SeriesMap fixture_dataset() {
  SeriesMap m;
  m["Alpha"] = esp::testing::outbreak_series(120, 1, "Alpha", 50'000'000);
  m["Beta"] = esp::testing::outbreak_series(100, 2, "Beta", 20'000'000);
  m["Gamma"] = esp::testing::outbreak_series(90, 3, "Gamma", 5'000'000);
  return m;
}

ServiceConfig small_config() {
  ServiceConfig c;
  c.rollouts = 20;
  c.default_horizon = 30;
  return c;
}

Json body(const HttpResponse& r) { return Json::parse(r.body); }

double total_cases(const Json& j) {
  double t = 0.0;
  for (const auto& d : j["forecast"]["days"]) t += d["new_cases"].get<double>();
  return t;
}

}  // namespace

TEST_CASE("service: health, countries and prescriptors") {
  Service svc(esp::testing::fixture_artifacts(fixture_dataset(), true), small_config());
  const auto h = body(svc.health());
  CHECK(h["status"] == "ok");
  CHECK(h["uncertainty"] == true);
  CHECK(h["countries"] == 3);

  const auto c = body(svc.countries());
  REQUIRE(c["countries"].size() == 3);
  CHECK(c["countries"][0]["id"] == "Alpha");
  CHECK(c["countries"][0]["current_npis"].size() == kNumNpis);

  const auto p = body(svc.prescriptors());
  const auto& list = p["prescriptors"];
  REQUIRE(list.size() == 20);
  std::set<std::string> hashes;
  for (std::size_t i = 0; i < list.size(); ++i) {
    CHECK(list[i]["index"] == i);
    hashes.insert(list[i]["hash"].get<std::string>());
    if (i > 0) {
      CHECK(list[i]["mean_stringency"].get<double>() < list[i - 1]["mean_stringency"].get<double>());
    }
    for (std::size_t j = 0; j < list.size(); ++j) {
      const double ci = list[i]["mean_cases"], si = list[i]["mean_stringency"];
      const double cj = list[j]["mean_cases"], sj = list[j]["mean_stringency"];
      const bool dominates = cj <= ci && sj <= si && (cj < ci || sj < si);
      CHECK_FALSE(dominates);
    }
  }
  CHECK(hashes.size() == 20);
}

TEST_CASE("service: forecast shape, caching and errors") {
  Service svc(esp::testing::fixture_artifacts(fixture_dataset(), true), small_config());
  const auto r = svc.forecast({{"country", "Beta"}, {"prescriptor", "3"}, {"horizon", "12"}});
  REQUIRE(r.status == 200);
  const auto j = body(r);
  CHECK(j["horizon"] == 12);
  CHECK(j["n_rollouts"] == 20);
  CHECK(j["history"].size() == 42);
  REQUIRE(j["forecast"]["days"].size() == 12);
  for (const auto& d : j["forecast"]["days"]) {
    CHECK(d["q25"].get<double>() <= d["q50"].get<double>());
    CHECK(d["q50"].get<double>() <= d["q75"].get<double>());
    CHECK(d["npis"].size() == kNumNpis);
  }
  CHECK(svc.cache_entries() == 1);
  const auto again = svc.forecast({{"country", "Beta"}, {"prescriptor", "3"}, {"horizon", "12"}});
  CHECK(again.body == r.body);
  CHECK(svc.cache_entries() == 1);

  auto err = svc.forecast({{"country", "Nowhere"}});
  CHECK(err.status == 404);
  CHECK(body(err)["error"]["code"] == "unknown_country");
  err = svc.forecast({{"country", "Beta"}, {"prescriptor", "20"}});
  CHECK(err.status == 404);
  CHECK(body(err)["error"]["code"] == "unknown_prescriptor");
  err = svc.forecast({{"country", "Beta"}, {"horizon", "181"}});
  CHECK(err.status == 422);
  CHECK(body(err)["error"]["code"] == "invalid_horizon");
  err = svc.forecast({{"country", "Beta"}, {"horizon", "ten"}});
  CHECK(err.status == 400);
  CHECK(svc.handle("GET", "/nope", {}, "").status == 404);
  CHECK(svc.handle("GET", "/health", {}, "").status == 200);
}

TEST_CASE("service: scratchpad") {
  Service svc(esp::testing::fixture_artifacts(fixture_dataset(), true), small_config());
  const auto base = svc.forecast({{"country", "Alpha"}, {"prescriptor", "5"}, {"horizon", "20"}});
  const auto same =
      svc.scratchpad(R"({"country":"Alpha","prescriptor":5,"horizon":20,"edits":[]})");
  REQUIRE(same.status == 200);
  CHECK(same.body == base.body);

  Json zero = Json::array(), full = Json::array();
  for (int d = 0; d < 20; ++d) {
    zero.push_back(npis_to_json(NpiVector{}));
    full.push_back(npis_to_json(NpiVector::all_max()));
  }
  const auto z = svc.scratchpad(Json{{"country", "Alpha"}, {"horizon", 20}, {"schedule", zero}}.dump());
  const auto f = svc.scratchpad(Json{{"country", "Alpha"}, {"horizon", 20}, {"schedule", full}}.dump());
  REQUIRE(z.status == 200);
  REQUIRE(f.status == 200);
  CHECK(total_cases(body(f)) <= total_cases(body(z)));

  const auto edited = svc.scratchpad(
      R"({"country":"Alpha","prescriptor":5,"horizon":20,"edits":[{"day":3,"npi":0,"level":3}]})");
  REQUIRE(edited.status == 200);
  CHECK(body(edited)["forecast"]["days"][3]["npis"][0] == 3);

  const auto bad = svc.scratchpad(
      R"({"country":"Alpha","prescriptor":5,"horizon":20,"edits":[{"day":2,"npi":0,"level":9},{"day":4,"npi":2,"level":-1}]})");
  CHECK(bad.status == 422);
  CHECK(body(bad)["error"]["code"] == "invalid_npi_level");
  CHECK(body(bad)["error"]["days"] == Json({2, 4}));

  CHECK(svc.scratchpad(Json{{"country", "Alpha"}, {"horizon", 20}, {"schedule", Json::array()}}.dump())
            .status == 422);
  CHECK(svc.scratchpad(R"({"country":"Alpha","horizon":20})").status == 400);
  CHECK(svc.scratchpad("{not json").status == 400);
  CHECK(svc.scratchpad(R"({"country":"Alpha","prescriptor":1,"start_date":"20990101"})").status ==
        422);
}

TEST_CASE("service without a calibrator omits bands") {
  Service svc(esp::testing::fixture_artifacts(fixture_dataset(), false), small_config());
  CHECK(body(svc.health())["uncertainty"] == false);
  const auto j = body(svc.forecast({{"country", "Gamma"}, {"horizon", "5"}}));
  CHECK(j["n_rollouts"].is_null());
  CHECK_FALSE(j["forecast"]["days"][0].contains("q50"));
  CHECK_FALSE(j["forecast"].contains("band"));
}

TEST_CASE("service over HTTP") {
  auto cfg = small_config();
  cfg.port = 0;
  cfg.cors_origin = "https://example.org";
  Service svc(esp::testing::fixture_artifacts(fixture_dataset(), false), cfg);
  const int port = svc.bind();
  REQUIRE(port > 0);
  std::thread t([&] { svc.listen(); });
  httplib::Client cli("127.0.0.1", port);
  cli.set_connection_timeout(5);
  auto res = cli.Get("/health");
  REQUIRE(res);
  CHECK(res->status == 200);
  CHECK(res->get_header_value("Access-Control-Allow-Origin") == "https://example.org");
  CHECK(res->get_header_value("Content-Type").find("application/json") != std::string::npos);
  res = cli.Get("/forecast?country=Gamma&horizon=5&prescriptor=2");
  REQUIRE(res);
  CHECK(res->status == 200);
  CHECK(Json::parse(res->body)["forecast"]["days"].size() == 5);
  res = cli.Post("/scratchpad", R"({"country":"Gamma"})", "application/json");
  REQUIRE(res);
  CHECK(res->status == 400);
  svc.stop();
  t.join();
}
