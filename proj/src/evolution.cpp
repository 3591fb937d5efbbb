#include "esp/evolution.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numeric>
#include <thread>

#include "esp/error.hpp"

namespace esp {

void EvolutionConfig::validate() const {
  if (population < 2) throw ConfigError("population must be at least 2");
  if (!(elite_frac > 0.0 && elite_frac < parent_pool_frac && parent_pool_frac <= 1.0)) {
    throw ConfigError("need 0 < elite_frac < parent_pool_frac <= 1");
  }
  if (mutation_prob < 0.0 || mutation_prob > 1.0) throw ConfigError("mutation_prob must be in [0,1]");
  if (mutation_std < 0.0) throw ConfigError("mutation_std must be non-negative");
  if (generations < 0) throw ConfigError("generations must be non-negative");
  if (horizon < 1 || horizon > kMaxHorizon) throw ConfigError("horizon out of range");
  if (n_countries < 1) throw ConfigError("need at least one evaluation country");
  if (threads < 0) throw ConfigError("threads must be non-negative");
}

int EvolutionConfig::elite_count() const {
  return std::clamp(static_cast<int>(std::lround(elite_frac * population)), 1, population - 1);
}

int EvolutionConfig::parent_pool_size() const {
  return std::clamp(static_cast<int>(std::lround(parent_pool_frac * population)), 2, population);
}

namespace {

std::vector<ForecastRequest> closed_loop_requests(const PrescriptorNet& net,
                                                  std::span<const ForecastContext> contexts,
                                                  int horizon) {
  std::vector<ForecastRequest> reqs;
  reqs.reserve(contexts.size());
  for (const auto& c : contexts) {
    ForecastRequest r;
    r.context = c;
    r.horizon = horizon;
    r.policy = [&net](std::span<const double> window) { return prescribe(net, window); };
    reqs.push_back(std::move(r));
  }
  return reqs;
}

Objectives summarize(std::span<const ForecastResult> results) {
  double cases = 0.0, stringency = 0.0;
  for (const auto& r : results) {
    double c = 0.0, s = 0.0;
    for (const auto& d : r.days) c += d.new_cases;
    for (const auto& v : r.npis) s += v.stringency();
    const auto h = static_cast<double>(std::max<std::size_t>(r.days.size(), 1));
    cases += c / h;
    stringency += s / h;
  }
  const auto n = static_cast<double>(results.size());
  return {cases / n, stringency / n};
}

bool finite(const Objectives& o) { return std::isfinite(o[0]) && std::isfinite(o[1]); }

constexpr std::size_t kChunk = 8;

void evaluate_chunk(std::vector<Genome*>& chunk, const RatioPredictor& predictor,
                    std::span<const ForecastContext> contexts, int horizon) {
  std::vector<PrescriptorNet> nets(chunk.size());
  std::vector<ForecastRequest> reqs;
  for (std::size_t g = 0; g < chunk.size(); ++g) {
    nets[g].weights = chunk[g]->weights;
    auto r = closed_loop_requests(nets[g], contexts, horizon);
    std::move(r.begin(), r.end(), std::back_inserter(reqs));
  }
  bool ok = true;
  try {
    const auto results = rollout_batch(predictor, reqs);
    for (std::size_t g = 0; g < chunk.size(); ++g) {
      const auto o = summarize(std::span(results).subspan(g * contexts.size(), contexts.size()));
      if (!finite(o)) {
        ok = false;
        break;
      }
      chunk[g]->objectives = o;
      chunk[g]->evaluated = true;
      chunk[g]->flagged = false;
    }
  } catch (const std::exception&) {
    ok = false;
  }
  if (ok) return;
  // Isolate the failing genomes.
  for (std::size_t g = 0; g < chunk.size(); ++g) {
    try {
      const auto o = evaluate(nets[g], predictor, contexts, horizon);
      if (!finite(o)) throw NumericalError("non-finite objectives");
      chunk[g]->objectives = o;
      chunk[g]->flagged = false;
    } catch (const std::exception&) {
      chunk[g]->objectives = kWorstObjectives;
      chunk[g]->flagged = true;
    }
    chunk[g]->evaluated = true;
  }
}

// Exclusive 2-D hypervolume contribution within a mutually nondominated set;
// the two extremes are infinite.
std::vector<double> hv_contributions(const std::vector<Objectives>& pts) {
  const auto m = pts.size();
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return pts[a][0] < pts[b][0] || (pts[a][0] == pts[b][0] && pts[a][1] > pts[b][1]);
  });
  std::vector<double> c(m, std::numeric_limits<double>::infinity());
  for (std::size_t k = 1; k + 1 < m; ++k) {
    const auto& left = pts[order[k - 1]];
    const auto& mid = pts[order[k]];
    const auto& right = pts[order[k + 1]];
    c[order[k]] = (right[0] - mid[0]) * (left[1] - mid[1]);
  }
  return c;
}

// Best `n` of `merged` by front; the front that does not fit is thinned by
// repeatedly dropping its smallest hypervolume contributor.
std::vector<Genome> select_survivors(std::vector<Genome> merged, std::size_t n) {
  std::vector<Objectives> obj;
  for (const auto& g : merged) obj.push_back(g.objectives);
  const auto fronts = nondominated_sort(obj);
  std::vector<Genome> out;
  for (const auto& f : fronts) {
    if (out.size() + f.size() <= n) {
      for (auto i : f) out.push_back(merged[i]);
      if (out.size() == n) break;
      continue;
    }
    std::vector<std::size_t> keep(f.begin(), f.end());
    while (out.size() + keep.size() > n) {
      std::vector<Objectives> pts;
      for (auto i : keep) pts.push_back(obj[i]);
      const auto c = hv_contributions(pts);
      std::size_t worst = 0;
      for (std::size_t k = 1; k < keep.size(); ++k) {
        if (c[k] < c[worst] ||
            (c[k] == c[worst] && merged[keep[k]].hash() > merged[keep[worst]].hash())) {
          worst = k;
        }
      }
      keep.erase(keep.begin() + static_cast<std::ptrdiff_t>(worst));
    }
    for (auto i : keep) out.push_back(merged[i]);
    break;
  }
  return out;
}

GenerationStats stats_of(int generation, const std::vector<Genome>& pop) {
  GenerationStats s;
  s.generation = generation;
  for (std::size_t i = 0; i < pop.size(); ++i) {
    s.objectives.push_back(pop[i].objectives);
    if (pop[i].rank == 0) s.front.push_back(i);
    if (pop[i].flagged) ++s.flagged;
  }
  return s;
}

}  // namespace

Objectives evaluate(const PrescriptorNet& net, const RatioPredictor& predictor,
                    std::span<const ForecastContext> contexts, int horizon) {
  if (contexts.empty()) throw ConfigError("no evaluation contexts");
  const auto reqs = closed_loop_requests(net, contexts, horizon);
  const auto results = rollout_batch(predictor, reqs);
  return summarize(results);
}

void evaluate_population(std::vector<Genome>& population, const RatioPredictor& predictor,
                         std::span<const ForecastContext> contexts, int horizon, int threads) {
  if (contexts.empty()) throw ConfigError("no evaluation contexts");
  std::vector<std::vector<Genome*>> chunks;
  for (auto& g : population) {
    if (g.evaluated) continue;
    if (chunks.empty() || chunks.back().size() == kChunk) chunks.emplace_back();
    chunks.back().push_back(&g);
  }
  if (chunks.empty()) return;
  unsigned workers = threads > 0 ? static_cast<unsigned>(threads) : std::thread::hardware_concurrency();
  workers = std::clamp<unsigned>(workers, 1u, static_cast<unsigned>(chunks.size()));
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t c; (c = next.fetch_add(1)) < chunks.size();) {
      evaluate_chunk(chunks[c], predictor, contexts, horizon);
    }
  };
  if (workers == 1) {
    work();
    return;
  }
  std::vector<std::jthread> pool;
  for (unsigned w = 0; w < workers; ++w) pool.emplace_back(work);
}

void assign_rank_and_crowding(std::vector<Genome>& population) {
  std::vector<Objectives> obj;
  for (const auto& g : population) {
    if (!g.evaluated) throw Error("cannot rank unevaluated genomes");
    obj.push_back(g.objectives);
  }
  const auto fronts = nondominated_sort(obj);
  for (std::size_t f = 0; f < fronts.size(); ++f) {
    const auto d = crowding_distance(obj, fronts[f]);
    for (std::size_t k = 0; k < fronts[f].size(); ++k) {
      population[fronts[f][k]].rank = static_cast<int>(f);
      population[fronts[f][k]].crowding = d[k];
    }
  }
}

std::vector<std::size_t> nsga_order(const std::vector<Genome>& pop) {
  std::vector<std::size_t> order(pop.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<std::uint64_t> hashes;
  for (const auto& g : pop) hashes.push_back(g.hash());
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (pop[a].rank != pop[b].rank) return pop[a].rank < pop[b].rank;
    if (pop[a].crowding != pop[b].crowding) return pop[a].crowding > pop[b].crowding;
    if (hashes[a] != hashes[b]) return hashes[a] < hashes[b];
    return a < b;
  });
  return order;
}

std::uint64_t child_seed(std::uint64_t seed, int generation, int index) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(seed) ^ static_cast<std::uint64_t>(generation)) ^
             static_cast<std::uint64_t>(index));
}

std::vector<double> make_child(std::span<const double> a, std::span<const double> b,
                               const EvolutionConfig& cfg, std::mt19937_64& rng) {
  if (a.size() != b.size()) throw ShapeError("parents differ in genome length");
  std::bernoulli_distribution pick(0.5), mutate(cfg.mutation_prob);
  std::normal_distribution<double> factor(cfg.mutation_mean, cfg.mutation_std);
  std::vector<double> child(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    child[i] = pick(rng) ? a[i] : b[i];
    if (mutate(rng)) child[i] *= factor(rng);
  }
  return child;
}

EvolutionResult evolve(const EvolutionConfig& cfg, const RatioPredictor& predictor,
                       std::span<const ForecastContext> contexts,
                       const std::function<void(const GenerationStats&)>& on_generation) {
  cfg.validate();
  if (contexts.empty()) throw ConfigError("no evaluation contexts");
  const auto n = static_cast<std::size_t>(cfg.population);
  EvolutionResult res;
  std::mt19937_64 init_rng(cfg.seed);
  res.population.resize(n);
  for (auto& g : res.population) g.weights = PrescriptorNet::orthogonal(init_rng).weights;
  evaluate_population(res.population, predictor, contexts, cfg.horizon, cfg.threads);
  assign_rank_and_crowding(res.population);
  res.log.push_back(stats_of(0, res.population));
  if (on_generation) on_generation(res.log.back());

  const int n_children = cfg.population - cfg.elite_count();
  const auto pool_size = static_cast<std::size_t>(cfg.parent_pool_size());
  for (int gen = 1; gen <= cfg.generations; ++gen) {
    const auto order = nsga_order(res.population);
    std::vector<Genome> children(static_cast<std::size_t>(n_children));
    for (int c = 0; c < n_children; ++c) {
      std::mt19937_64 rng(child_seed(cfg.seed, gen, c));
      std::uniform_int_distribution<std::size_t> draw(0, pool_size - 1);
      auto tournament = [&] { return order[std::min(draw(rng), draw(rng))]; };
      const auto& p1 = res.population[tournament()];
      const auto& p2 = res.population[tournament()];
      children[static_cast<std::size_t>(c)].weights = make_child(p1.weights, p2.weights, cfg, rng);
    }
    evaluate_population(children, predictor, contexts, cfg.horizon, cfg.threads);
    auto merged = std::move(res.population);
    std::move(children.begin(), children.end(), std::back_inserter(merged));
    res.population = select_survivors(std::move(merged), n);
    assign_rank_and_crowding(res.population);
    res.log.push_back(stats_of(gen, res.population));
    if (on_generation) on_generation(res.log.back());
  }
  res.front = res.log.back().front;
  return res;
}

std::vector<std::size_t> select_representatives(const std::vector<Genome>& population,
                                                std::span<const std::size_t> front, int k) {
  std::vector<Objectives> obj;
  for (const auto& g : population) obj.push_back(g.objectives);
  const auto d = crowding_distance(obj, front);
  std::vector<std::size_t> idx(front.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::vector<std::uint64_t> hashes;
  for (auto i : front) hashes.push_back(population[i].hash());
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (d[a] != d[b]) return d[a] > d[b];
    return hashes[a] < hashes[b];
  });
  idx.resize(std::min(idx.size(), static_cast<std::size_t>(std::max(k, 0))));
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    const double sa = obj[front[a]][1], sb = obj[front[b]][1];
    if (sa != sb) return sa > sb;
    return hashes[a] < hashes[b];
  });
  std::vector<std::size_t> out;
  for (auto i : idx) out.push_back(front[i]);
  return out;
}

std::vector<ForecastContext> evaluation_contexts(const SeriesMap& series, int n,
                                                 std::optional<Date> date) {
  std::vector<ForecastContext> out;
  for (const auto& id : countries_by_cases(series)) {
    if (static_cast<int>(out.size()) >= n) break;
    const auto& s = series.at(id);
    std::size_t end = s.size();
    if (date) end = static_cast<std::size_t>(std::upper_bound(s.dates.begin(), s.dates.end(), *date) - s.dates.begin());
    for (std::size_t i = end; i-- > 0;) {
      try {
        out.push_back(make_context(s, i));
        break;
      } catch (const Error&) {
      }
    }
  }
  return out;
}

}  // namespace esp
