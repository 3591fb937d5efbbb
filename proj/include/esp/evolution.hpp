#pragma once

// Evolution of prescriptor genomes against a ratio predictor with NSGA-II.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "esp/forecast.hpp"
#include "esp/nsga2.hpp"
#include "esp/prescriptor.hpp"

namespace esp {

struct Genome {
  std::vector<double> weights = std::vector<double>(kGenomeSize, 0.0);
  Objectives objectives{0.0, 0.0};
  bool evaluated = false;
  bool flagged = false;  // a rollout failed; objectives are worst-case
  int rank = -1;
  double crowding = 0.0;
  std::uint64_t hash() const { return genome_hash(weights); }
};

inline constexpr Objectives kWorstObjectives{1e300, static_cast<double>(kMaxStringency)};

struct EvolutionConfig {
  int population = 250;
  double elite_frac = 0.06;
  double parent_pool_frac = 0.20;
  double mutation_prob = 0.20;
  double mutation_mean = 1.0;
  double mutation_std = 0.1;
  int generations = 110;
  int horizon = 180;
  int n_countries = 20;
  std::uint64_t seed = 0;
  int threads = 0;  // 0 = hardware concurrency

  void validate() const;
  int elite_count() const;
  int parent_pool_size() const;
};

/// Closed-loop rollouts of one genome over all contexts; objectives are the
/// per-country horizon means of new cases and daily stringency, averaged over
/// countries.
Objectives evaluate(const PrescriptorNet& net, const RatioPredictor& predictor,
                    std::span<const ForecastContext> contexts, int horizon);

/// Evaluates every genome not yet evaluated. Failures are flagged with
/// worst-case objectives.
void evaluate_population(std::vector<Genome>& population, const RatioPredictor& predictor,
                         std::span<const ForecastContext> contexts, int horizon, int threads = 0);

/// Assigns rank and crowding to every genome.
void assign_rank_and_crowding(std::vector<Genome>& population);

/// Indices ordered by (rank ascending, crowding descending, hash).
std::vector<std::size_t> nsga_order(const std::vector<Genome>& population);

struct GenerationStats {
  int generation = 0;
  std::vector<Objectives> objectives;  // whole population
  std::vector<std::size_t> front;      // indices of front 0
  int flagged = 0;
};

struct EvolutionResult {
  std::vector<Genome> population;
  std::vector<std::size_t> front;  // front 0 of the final population
  std::vector<GenerationStats> log;
};

/// RNG seed for child `index` of generation `generation`.
std::uint64_t child_seed(std::uint64_t seed, int generation, int index);

/// Uniform per-weight crossover followed by multiplicative mutation.
std::vector<double> make_child(std::span<const double> a, std::span<const double> b,
                               const EvolutionConfig& cfg, std::mt19937_64& rng);

/// Generation 0 is the evaluated initial population; each later generation
/// breeds population - elites children from binary tournaments within the
/// top parent pool and keeps the best `population` of parents plus children.
EvolutionResult evolve(const EvolutionConfig& cfg, const RatioPredictor& predictor,
                       std::span<const ForecastContext> contexts,
                       const std::function<void(const GenerationStats&)>& on_generation = {});

/// The k front members with the largest crowding distance, ordered by mean
/// stringency descending, ties by genome hash.
std::vector<std::size_t> select_representatives(const std::vector<Genome>& population,
                                                std::span<const std::size_t> front, int k = 20);

/// Contexts for the `n` countries with most cases, each ending on `date` or
/// on the latest earlier day with a complete window (latest day when no date
/// is given). Countries without one are skipped.
std::vector<ForecastContext> evaluation_contexts(const SeriesMap& series, int n,
                                                 std::optional<Date> date = std::nullopt);

}  // namespace esp
