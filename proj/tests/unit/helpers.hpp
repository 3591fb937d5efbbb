#pragma once

#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "esp/data.hpp"

namespace esp::testing {

inline CountrySeries make_series(const std::vector<std::int64_t>& x, std::int64_t population,
                                 const std::string& id = "Testland",
                                 NpiVector npi = NpiVector{}) {
  CountrySeries s;
  s.id = id;
  s.population = population;
  const Date start = parse_yyyymmdd("20200301");
  for (std::size_t i = 0; i < x.size(); ++i) {
    s.dates.push_back(start + std::chrono::days{static_cast<int>(i)});
    s.npis.push_back(npi);
  }
  s.new_cases = x;
  s.cumulative.resize(x.size());
  std::partial_sum(x.begin(), x.end(), s.cumulative.begin());
  s.smoothed = smooth(s.new_cases);
  return s;
}

/// Growing outbreak with mild noise: every ratio defined from day 7 on.
inline CountrySeries outbreak_series(std::size_t days, std::uint64_t seed,
                                     const std::string& id = "Testland",
                                     std::int64_t population = 10'000'000) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> noise(0, 5);
  std::uniform_int_distribution<int> level(0, 4);
  std::vector<std::int64_t> x(days);
  double v = 20.0;
  for (std::size_t i = 0; i < days; ++i) {
    v *= 1.03;
    x[i] = static_cast<std::int64_t>(v) + noise(rng);
  }
  auto s = make_series(x, population, id);
  for (std::size_t i = 0; i < days; ++i) {
    for (std::size_t k = 0; k < kNumNpis; ++k) {
      s.npis[i].levels[k] = std::min(level(rng), kNpiMax[k]);
    }
  }
  return s;
}

}  // namespace esp::testing
