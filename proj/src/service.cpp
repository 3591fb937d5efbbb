#include "esp/service.hpp"

#include <algorithm>
#include <charconv>
#include <set>

#include "httplib.h"

#include "esp/ratio_model.hpp"

namespace esp {

namespace {

constexpr int kHistoryShown = 42;

HttpResponse json_response(int status, const Json& j) { return {status, j.dump()}; }

HttpResponse error_response(int status, const std::string& code, const std::string& message,
                            const std::vector<int>& days = {}) {
  Json e{{"code", code}, {"message", message}};
  if (!days.empty()) e["days"] = days;
  return json_response(status, Json{{"error", e}});
}

/// Thrown inside request handling and mapped to an error body.
struct RequestError {
  int status;
  std::string code;
  std::string message;
  std::vector<int> days;
};

std::optional<std::string> param(const QueryParams& p, const std::string& key) {
  auto it = p.find(key);
  if (it == p.end()) return std::nullopt;
  return it->second;
}

long long parse_int(const std::string& text, const std::string& name) {
  long long v = 0;
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end) {
    throw RequestError{400, "bad_request", name + " must be an integer", {}};
  }
  return v;
}

ForecastContext latest_context(const CountrySeries& s) {
  for (std::size_t i = s.size(); i-- > 0;) {
    try {
      return make_context(s, i);
    } catch (const Error&) {
    }
  }
  throw RequestError{422, "no_context", "country " + s.id + " has no usable 21-day window", {}};
}

}  // namespace

struct Service::Resolved {
  const CountrySeries* series = nullptr;
  ForecastContext context;
  int horizon = 0;
  std::optional<int> prescriptor;
  std::vector<NpiVector> schedule;
  std::vector<NpiOverride> edits;
  std::uint64_t seed = 0;
};

struct Service::Server {
  httplib::Server http;
};

PublishedArtifacts load_published(const Registry& registry, const std::string& manifest_fp) {
  PublishedArtifacts a;
  if (manifest_fp.empty()) {
    a.manifest = registry.published(&a.manifest_fingerprint);
  } else {
    a.manifest_fingerprint = manifest_fp;
    a.manifest = manifest_from_json(registry.get(manifest_fp, "manifest"));
  }
  a.dataset = dataset_from_json(registry.get(a.manifest.dataset, "dataset"));
  a.predictor = predictor_from_json(registry.get(a.manifest.predictor, "predictor"));
  if (!a.manifest.gp.empty()) a.gp = gp_from_json(registry.get(a.manifest.gp, "gp"));
  a.front = evolution_from_json(registry.get(a.manifest.front, "evolution"));
  return a;
}

Service::Service(PublishedArtifacts artifacts, ServiceConfig cfg)
    : art_(std::move(artifacts)), cfg_(std::move(cfg)) {
  if (cfg_.rollouts < 4) throw ConfigError("rollouts must be at least 4");
  if (cfg_.max_horizon < 1 || cfg_.max_horizon > kMaxHorizon) throw ConfigError("bad max_horizon");
  cfg_.default_horizon = std::clamp(cfg_.default_horizon, 1, cfg_.max_horizon);
  for (auto i : art_.front.representatives) {
    representative_hashes_.push_back(std::to_string(art_.front.front[i].hash()));
  }
}

Service::~Service() { stop(); }

HttpResponse Service::health() const {
  return json_response(200, Json{{"status", "ok"},
                                 {"manifest", art_.manifest_fingerprint},
                                 {"uncertainty", art_.gp.has_value()},
                                 {"countries", art_.dataset.size()},
                                 {"prescriptors", art_.front.representatives.size()}});
}

HttpResponse Service::countries() const {
  Json list = Json::array();
  for (const auto& id : countries_by_cases(art_.dataset)) {
    const auto& s = art_.dataset.at(id);
    if (s.size() == 0) continue;
    std::int64_t recent = 0;
    for (std::size_t i = s.size() > kTestDays ? s.size() - kTestDays : 0; i < s.size(); ++i) {
      recent += s.new_cases[i];
    }
    list.push_back({{"id", s.id},
                    {"name", s.id},
                    {"code", s.code},
                    {"population", s.population},
                    {"first_date", format_yyyymmdd(s.dates.front())},
                    {"last_date", format_yyyymmdd(s.dates.back())},
                    {"total_cases", s.total_cases()},
                    {"recent_new_cases", recent},
                    {"current_npis", npis_to_json(s.npis.back())}});
  }
  return json_response(200, Json{{"countries", list}});
}

HttpResponse Service::prescriptors() const {
  Json list = Json::array();
  for (std::size_t k = 0; k < art_.front.representatives.size(); ++k) {
    const auto& g = art_.front.front[art_.front.representatives[k]];
    list.push_back({{"index", k},
                    {"mean_cases", g.objectives[0]},
                    {"mean_stringency", g.objectives[1]},
                    {"hash", representative_hashes_[k]}});
  }
  return json_response(200, Json{{"front", art_.manifest.front}, {"prescriptors", list}});
}

HttpResponse Service::forecast(const QueryParams& params) {
  try {
    Resolved r;
    const auto country = param(params, "country");
    if (!country) throw RequestError{400, "bad_request", "country is required", {}};
    auto it = art_.dataset.find(*country);
    if (it == art_.dataset.end()) {
      throw RequestError{404, "unknown_country", "no country '" + *country + "'", {}};
    }
    r.series = &it->second;
    r.context = latest_context(*r.series);
    const auto p = parse_int(param(params, "prescriptor").value_or("0"), "prescriptor");
    if (p < 0 || p >= static_cast<long long>(art_.front.representatives.size())) {
      throw RequestError{404, "unknown_prescriptor", "no prescriptor " + std::to_string(p), {}};
    }
    r.prescriptor = static_cast<int>(p);
    const auto h = param(params, "horizon");
    r.horizon = h ? static_cast<int>(parse_int(*h, "horizon")) : cfg_.default_horizon;
    if (r.horizon < 1 || r.horizon > cfg_.max_horizon) {
      throw RequestError{422, "invalid_horizon",
                         "horizon must be in [1, " + std::to_string(cfg_.max_horizon) + "]", {}};
    }
    const auto s = param(params, "seed");
    r.seed = s ? static_cast<std::uint64_t>(parse_int(*s, "seed")) : cfg_.seed;
    const auto key = "forecast|" + *country + "|" + std::to_string(p) + "|" +
                     std::to_string(r.horizon) + "|" + std::to_string(r.seed);
    return respond(r, key);
  } catch (const RequestError& e) {
    return error_response(e.status, e.code, e.message, e.days);
  }
}

HttpResponse Service::scratchpad(const std::string& body) {
  try {
    Json req;
    try {
      req = Json::parse(body);
    } catch (const Json::exception& e) {
      throw RequestError{400, "bad_request", std::string("malformed JSON: ") + e.what(), {}};
    }
    if (!req.is_object()) throw RequestError{400, "bad_request", "body must be an object", {}};
    try {
      Resolved r;
      const auto country = req.at("country").get<std::string>();
      auto it = art_.dataset.find(country);
      if (it == art_.dataset.end()) {
        throw RequestError{404, "unknown_country", "no country '" + country + "'", {}};
      }
      r.series = &it->second;
      if (req.contains("start_date") && !req["start_date"].is_null()) {
        Date d{};
        try {
          d = parse_yyyymmdd(req["start_date"].get<std::string>());
        } catch (const Error& e) {
          throw RequestError{400, "bad_request", e.what(), {}};
        }
        try {
          r.context = make_context(*r.series, d);
        } catch (const Error& e) {
          throw RequestError{422, "invalid_start_date", e.what(), {}};
        }
      } else {
        r.context = latest_context(*r.series);
      }
      r.horizon = req.value("horizon", cfg_.default_horizon);
      if (r.horizon < 1 || r.horizon > cfg_.max_horizon) {
        throw RequestError{422, "invalid_horizon",
                           "horizon must be in [1, " + std::to_string(cfg_.max_horizon) + "]", {}};
      }
      r.seed = req.value("seed", cfg_.seed);

      const bool has_p = req.contains("prescriptor") && !req["prescriptor"].is_null();
      const bool has_s = req.contains("schedule") && !req["schedule"].is_null();
      if (has_p == has_s) {
        throw RequestError{400, "bad_request", "give exactly one of prescriptor or schedule", {}};
      }
      std::set<int> bad_days;
      if (has_p) {
        const int p = req["prescriptor"].get<int>();
        if (p < 0 || p >= static_cast<int>(art_.front.representatives.size())) {
          throw RequestError{404, "unknown_prescriptor", "no prescriptor " + std::to_string(p), {}};
        }
        r.prescriptor = p;
      } else {
        const auto& sched = req["schedule"];
        if (!sched.is_array() || sched.size() < static_cast<std::size_t>(r.horizon)) {
          throw RequestError{422, "schedule_too_short", "schedule must cover the horizon", {}};
        }
        for (std::size_t d = 0; d < sched.size(); ++d) {
          NpiVector v;
          try {
            v = npis_from_json(sched[d]);
          } catch (const std::exception&) {
            bad_days.insert(static_cast<int>(d));
            continue;
          }
          if (!v.within_bounds()) bad_days.insert(static_cast<int>(d));
          r.schedule.push_back(v);
        }
      }
      for (const auto& e : req.value("edits", Json::array())) {
        NpiOverride o{e.at("day").get<int>(), e.at("npi").get<int>(), e.at("level").get<int>()};
        const bool ok = o.day >= 0 && o.day < r.horizon && o.npi >= 0 &&
                        o.npi < static_cast<int>(kNumNpis) && o.level >= 0 &&
                        o.level <= kNpiMax[static_cast<std::size_t>(o.npi)];
        if (!ok) bad_days.insert(o.day);
        r.edits.push_back(o);
      }
      if (!bad_days.empty()) {
        throw RequestError{422, "invalid_npi_level", "NPI levels outside their bounds",
                           std::vector<int>(bad_days.begin(), bad_days.end())};
      }
      Json key_edits = Json::array();
      for (const auto& o : r.edits) key_edits.push_back({o.day, o.npi, o.level});
      Json key_sched = Json::array();
      for (const auto& v : r.schedule) key_sched.push_back(npis_to_json(v));
      const Json key{{"c", country},
                     {"d", format_yyyymmdd(r.context.last_date)},
                     {"h", r.horizon},
                     {"p", r.prescriptor ? Json(*r.prescriptor) : Json(nullptr)},
                     {"s", key_sched},
                     {"e", key_edits},
                     {"seed", r.seed}};
      return respond(r, "scratchpad|" + key.dump());
    } catch (const Json::exception& e) {
      throw RequestError{400, "bad_request", e.what(), {}};
    }
  } catch (const RequestError& e) {
    return error_response(e.status, e.code, e.message, e.days);
  }
}

HttpResponse Service::respond(const Resolved& r, const std::string& cache_key) {
  if (auto hit = cache_get(cache_key)) return {200, *hit};

  ForecastRequest req;
  req.context = r.context;
  req.horizon = r.horizon;
  req.overrides = r.edits;
  if (r.prescriptor) {
    PrescriptorNet net;
    net.weights = art_.front.front[art_.front.representatives[static_cast<std::size_t>(*r.prescriptor)]].weights;
    req.policy = [net](std::span<const double> window) { return prescribe(net, window); };
  } else {
    req.schedule = r.schedule;
  }
  NpiLstmPredictor predictor(art_.predictor);
  const auto result = rollout(predictor, req);
  std::optional<ForecastBand> band;
  if (art_.gp) {
    RioDistribution dist(art_.predictor, *art_.gp);
    band = mc_forecast(dist, req, cfg_.rollouts, r.seed);
  }

  const auto& s = *r.series;
  Json history = Json::array();
  const auto last = static_cast<std::size_t>(
      std::find(s.dates.begin(), s.dates.end(), r.context.last_date) - s.dates.begin());
  const std::size_t first = last + 1 > kHistoryShown ? last + 1 - kHistoryShown : 0;
  for (std::size_t i = first; i <= last && i < s.size(); ++i) {
    history.push_back({{"date", format_yyyymmdd(s.dates[i])},
                       {"new_cases", s.new_cases[i]},
                       {"cumulative", s.cumulative[i]},
                       {"npis", npis_to_json(s.npis[i])}});
  }
  Json body{{"artifacts",
             {{"manifest", art_.manifest_fingerprint},
              {"dataset", art_.manifest.dataset},
              {"predictor", art_.manifest.predictor},
              {"gp", art_.manifest.gp},
              {"front", art_.manifest.front}}},
            {"country", s.id},
            {"start_date", format_yyyymmdd(r.context.last_date)},
            {"horizon", r.horizon},
            {"prescriptor", r.prescriptor ? Json(*r.prescriptor) : Json(nullptr)},
            {"seed", r.seed},
            {"n_rollouts", band ? Json(cfg_.rollouts) : Json(nullptr)},
            {"history", std::move(history)},
            {"forecast", forecast_to_json(result, band ? &*band : nullptr)}};
  auto text = body.dump();
  cache_put(cache_key, text);
  return {200, std::move(text)};
}

std::optional<std::string> Service::cache_get(const std::string& key) {
  std::lock_guard lock(cache_mu_);
  auto it = index_.find(key);
  if (it == index_.end()) return std::nullopt;
  lru_.splice(lru_.begin(), lru_, it->second);
  return it->second->second;
}

void Service::cache_put(const std::string& key, const std::string& body) {
  if (cfg_.cache_size == 0) return;
  std::lock_guard lock(cache_mu_);
  if (index_.count(key)) return;
  lru_.emplace_front(key, body);
  index_[key] = lru_.begin();
  while (lru_.size() > cfg_.cache_size) {
    index_.erase(lru_.back().first);
    lru_.pop_back();
  }
}

std::size_t Service::cache_entries() const {
  std::lock_guard lock(cache_mu_);
  return lru_.size();
}

HttpResponse Service::handle(const std::string& method, const std::string& path,
                             const QueryParams& params, const std::string& body) {
  try {
    if (method == "GET" && path == "/health") return health();
    if (method == "GET" && path == "/countries") return countries();
    if (method == "GET" && path == "/prescriptors") return prescriptors();
    if (method == "GET" && path == "/forecast") return forecast(params);
    if (method == "POST" && path == "/scratchpad") return scratchpad(body);
    return error_response(404, "not_found", method + " " + path + " is not an endpoint");
  } catch (const std::exception& e) {
    return error_response(500, "internal", e.what());
  }
}

int Service::bind() {
  if (!server_) {
    server_ = std::make_unique<Server>();
    auto& http = server_->http;
    http.set_default_headers({{"Access-Control-Allow-Origin", cfg_.cors_origin},
                              {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                              {"Access-Control-Allow-Headers", "Content-Type"}});
    auto route = [this](const httplib::Request& req, httplib::Response& res) {
      QueryParams params(req.params.begin(), req.params.end());
      const auto out = handle(req.method, req.path, params, req.body);
      res.status = out.status;
      res.set_content(out.body, "application/json");
    };
    http.Get(".*", route);
    http.Post(".*", route);
    http.Options(".*", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
  }
  if (cfg_.port == 0) {
    port_ = server_->http.bind_to_any_port(cfg_.host);
  } else {
    port_ = server_->http.bind_to_port(cfg_.host, cfg_.port) ? cfg_.port : -1;
  }
  if (port_ < 0) throw Error("cannot bind " + cfg_.host + ":" + std::to_string(cfg_.port));
  return port_;
}

void Service::listen() {
  if (!server_ || port_ <= 0) bind();
  server_->http.listen_after_bind();
}

void Service::stop() {
  if (server_) server_->http.stop();
}

}  // namespace esp
