#pragma once

// Versioned JSON snapshots of datasets, predictors, GP calibrators, forecasts
// and evolution runs, plus SHA-256 fingerprints over their canonical dumps.

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "esp/data.hpp"
#include "esp/evolution.hpp"
#include "esp/predictor.hpp"
#include "esp/rio.hpp"

namespace esp {

using Json = nlohmann::json;

inline constexpr int kSchemaVersion = 1;

std::string sha256_hex(std::string_view bytes);
/// SHA-256 of the compact dump; object keys are sorted, so equal content
/// gives equal fingerprints.
std::string fingerprint(const Json& j);

Json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const Json& j);

/// Checks "kind" and "schema_version"; throws DataError on mismatch.
void expect_kind(const Json& j, std::string_view kind);

Json npis_to_json(const NpiVector& v);
NpiVector npis_from_json(const Json& j);

Json dataset_to_json(const SeriesMap& series);
SeriesMap dataset_from_json(const Json& j);

/// Tensors are stored row-major as flat arrays with their shape.
Json predictor_to_json(const PredictorModel& model);
PredictorModel predictor_from_json(const Json& j);

/// Hyperparameters, subsample indices and fingerprint, plus the training
/// inputs needed to rebuild the posterior.
Json gp_to_json(const GpModel& gp);
GpModel gp_from_json(const Json& j);

Json forecast_to_json(const ForecastResult& result, const ForecastBand* band = nullptr);

Json evolution_config_to_json(const EvolutionConfig& cfg);
EvolutionConfig evolution_config_from_json(const Json& j);

/// The published outcome of an evolution run: the final front and the ordered
/// representatives (indices into `front`).
struct EvolutionSnapshot {
  EvolutionConfig config;
  std::vector<Genome> front;
  std::vector<std::size_t> representatives;
  std::string predictor_fingerprint;
  std::string dataset_fingerprint;
};

EvolutionSnapshot make_snapshot(const EvolutionConfig& cfg, const EvolutionResult& result,
                                int representatives = 20);
Json evolution_to_json(const EvolutionSnapshot& snap);
EvolutionSnapshot evolution_from_json(const Json& j);

/// Run directory: config.json, generations.csv (one row per bred generation,
/// the initial population excluded),
/// front/genome_<i>.json (flat weight arrays) and representatives.json.
void write_run_directory(const std::filesystem::path& dir, const EvolutionSnapshot& snap,
                         const std::vector<GenerationStats>& log);

}  // namespace esp
