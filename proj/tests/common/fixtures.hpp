#pragma once

// Constant-policy prescriptors and a small published artifact set.

#include <cmath>
#include <random>
#include <vector>

#include "esp/evolution.hpp"
#include "esp/ratio_model.hpp"
#include "esp/serialize.hpp"
#include "esp/service.hpp"

namespace esp::testing {

/// Levels with total stringency `s`, built one level at a time round-robin,
/// so chain_levels(s) <= chain_levels(s + 1) elementwise.
inline NpiVector chain_levels(int s) {
  NpiVector v;
  std::size_t k = 0;
  for (int added = 0; added < s; k = (k + 1) % kNumNpis) {
    if (v.levels[k] < kNpiMax[k]) {
      ++v.levels[k];
      ++added;
    }
  }
  return v;
}

/// A genome whose output ignores its input and prescribes `levels`.
inline std::vector<double> constant_genome(const NpiVector& levels) {
  PrescriptorNet net;
  for (std::size_t k = 0; k < kNumNpis; ++k) {
    const double p = static_cast<double>(levels.levels[k]) / kNpiMax[k];
    net.weights[net.b2_offset() + k] = p <= 0.0 ? -50.0 : p >= 1.0 ? 50.0 : std::log(p / (1.0 - p));
  }
  return net.weights;
}

/// The 24 nested constant policies, evaluated, ranked, with front 0.
inline EvolutionResult constant_policy_population(const RatioPredictor& predictor,
                                                  std::span<const ForecastContext> contexts,
                                                  int horizon) {
  EvolutionResult r;
  for (int s = 0; s <= kMaxStringency; ++s) {
    Genome g;
    g.weights = constant_genome(chain_levels(s));
    r.population.push_back(std::move(g));
  }
  evaluate_population(r.population, predictor, contexts, horizon, 1);
  assign_rank_and_crowding(r.population);
  for (std::size_t i = 0; i < r.population.size(); ++i) {
    if (r.population[i].rank == 0) r.front.push_back(i);
  }
  return r;
}

inline GpModel random_gp(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  const int d = 2 * kHiddenUnits;
  Eigen::MatrixXd x(d, n);
  Eigen::VectorXd r(n), e(n);
  for (int j = 0; j < n; ++j) {
    for (int i = 0; i < d; ++i) x(i, j) = 0.3 * g(rng);
    r[j] = 1.0 + 0.1 * g(rng);
    e[j] = 0.05 * g(rng);
  }
  return GpModel(x, r, e, {0.01, 3.0, 0.01, 0.5, 0.002});
}

/// Three outbreak countries, a random predictor, 24 constant policies
/// evaluated against it and, optionally, a random calibrator.
inline PublishedArtifacts fixture_artifacts(const SeriesMap& dataset, bool with_gp) {
  PublishedArtifacts a;
  a.dataset = dataset;
  a.predictor = PredictorModel::initialized(7);
  NpiLstmPredictor predictor(a.predictor);
  const auto contexts = evaluation_contexts(a.dataset, 3);
  const auto pop = constant_policy_population(predictor, contexts, 30);
  EvolutionConfig cfg;
  cfg.horizon = 30;
  a.front = make_snapshot(cfg, pop);
  if (with_gp) a.gp = random_gp(64, 11);
  a.manifest = {"d", "p", with_gp ? "g" : "", "f"};
  a.manifest_fingerprint = "m";
  return a;
}

}  // namespace esp::testing
