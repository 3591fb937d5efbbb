#pragma once

// HTTP+JSON service over a published manifest: countries, the representative
// prescriptors, forecasts with quartile bands and scratchpad what-ifs.

#include <cstdint>
#include <filesystem>
#include <list>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>

#include "esp/registry.hpp"

namespace esp {

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::filesystem::path registry = "registry";
  std::string manifest;  // fingerprint; empty means the published ref
  std::size_t cache_size = 256;
  int rollouts = 100;
  std::uint64_t seed = 0;
  int default_horizon = 90;
  int max_horizon = 180;
  std::string cors_origin = "*";
};

struct PublishedArtifacts {
  Manifest manifest;
  std::string manifest_fingerprint;
  SeriesMap dataset;
  PredictorModel predictor;
  std::optional<GpModel> gp;
  EvolutionSnapshot front;
};

/// Loads the tuple named by `manifest_fp`, or the published one when empty.
PublishedArtifacts load_published(const Registry& registry, const std::string& manifest_fp = {});

struct HttpResponse {
  int status = 200;
  std::string body;
};

using QueryParams = std::multimap<std::string, std::string>;

class Service {
 public:
  Service(PublishedArtifacts artifacts, ServiceConfig cfg);
  ~Service();

  HttpResponse health() const;
  HttpResponse countries() const;
  HttpResponse prescriptors() const;
  HttpResponse forecast(const QueryParams& params);
  HttpResponse scratchpad(const std::string& body);

  /// Routes one request; used by the HTTP server and by tests.
  HttpResponse handle(const std::string& method, const std::string& path,
                      const QueryParams& params, const std::string& body);

  /// Blocks serving on cfg.host:cfg.port. With port 0 an ephemeral port is
  /// bound; see bound_port().
  void listen();
  /// Binds without serving; returns the port.
  int bind();
  void stop();
  int bound_port() const { return port_; }

  std::size_t cache_entries() const;

 private:
  struct Resolved;
  HttpResponse respond(const Resolved& r, const std::string& cache_key);
  std::optional<std::string> cache_get(const std::string& key);
  void cache_put(const std::string& key, const std::string& body);

  PublishedArtifacts art_;
  ServiceConfig cfg_;
  std::vector<std::string> representative_hashes_;

  mutable std::mutex cache_mu_;
  std::list<std::pair<std::string, std::string>> lru_;
  std::unordered_map<std::string, std::list<std::pair<std::string, std::string>>::iterator> index_;

  struct Server;
  std::unique_ptr<Server> server_;
  int port_ = 0;
};

}  // namespace esp
