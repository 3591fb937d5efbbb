#include <algorithm>
#include <cmath>
#include <set>

#include "doctest.h"
#include "esp/data.hpp"
#include "esp/error.hpp"
#include "helpers.hpp"

using namespace esp;
using esp::testing::make_series;
using esp::testing::outbreak_series;

namespace {

std::string toy_csv(const std::vector<std::string>& cumulative) {
  std::string out = "CountryName,CountryCode,Date";
  for (auto n : kNpiNames) out += "," + std::string(n);
  out += ",ConfirmedCases\n";
  int day = 1;
  for (const auto& c : cumulative) {
    char date[32];
    std::snprintf(date, sizeof(date), "202003%02d", day++);
    out += std::string("Toyland,TOY,") + date + ",1,1,1,1,1,1,1,1," + c + "\n";
  }
  return out;
}

LoadOptions tiny_options() {
  LoadOptions o;
  o.smoothing_window = 1;
  o.min_usable_days = 0;
  return o;
}

constexpr std::size_t kSnapshotCountries = 32;

const PopulationTable kToyPopulation{{"Toyland", 1000}};

}  // namespace

TEST_CASE("load: cumulative cases are first-differenced") {
  auto res = parse_tracker_csv(toy_csv({"10", "13", "13"}), kToyPopulation, tiny_options());
  REQUIRE(res.countries.count("Toyland") == 1);
  const auto& s = res.countries.at("Toyland");
  CHECK(s.new_cases == std::vector<std::int64_t>{10, 3, 0});
  CHECK(s.cumulative == std::vector<std::int64_t>{10, 13, 13});
  CHECK(s.flags.empty());
}

TEST_CASE("load: downward revision is floored at zero and flagged") {
  auto res = parse_tracker_csv(toy_csv({"10", "8"}), kToyPopulation, tiny_options());
  const auto& s = res.countries.at("Toyland");
  CHECK(s.new_cases == std::vector<std::int64_t>{10, 0});
  REQUIRE(s.flags.size() == 1);
  CHECK(s.flags[0].find("decrease") != std::string::npos);
}

TEST_CASE("load: malformed rows are reported with their line number") {
  std::string csv = toy_csv({"10", "13", "13"});
  csv += "Toyland,TOY,2020030x,1,1,1,1,1,1,1,1,20\n";
  csv += "Toyland,TOY,20200305,1,1\n";
  auto res = parse_tracker_csv(csv, kToyPopulation, tiny_options());
  REQUIRE(res.row_errors.size() == 2);
  CHECK(res.row_errors[0].row == 5);
  CHECK(res.row_errors[1].row == 6);
  CHECK(res.countries.at("Toyland").size() == 3);
}

TEST_CASE("load: countries missing from the population table are skipped") {
  auto res = parse_tracker_csv(toy_csv({"1", "2"}), PopulationTable{{"Elsewhere", 5}},
                               tiny_options());
  CHECK(res.countries.empty());
  REQUIRE(res.warnings.size() == 1);
  CHECK(res.warnings[0].find("not in population table") != std::string::npos);
}

TEST_CASE("load: missing required column is an error on the header line") {
  std::string csv = "CountryName,Date,ConfirmedCases\nToyland,20200301,1\n";
  try {
    parse_tracker_csv(csv, kToyPopulation);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(e.row() == 1);
  }
}

TEST_CASE("load: gaps are filled, blank NPIs carried forward, leading blanks are zero") {
  std::string csv = "CountryName,CountryCode,Date";
  for (auto n : kNpiNames) csv += "," + std::string(n);
  csv += ",ConfirmedCases\n";
  csv += "Toyland,TOY,20200301,,2,,,,,,,5\n";
  csv += "Toyland,TOY,20200302,3,,,,,,,,7\n";
  csv += "Toyland,TOY,20200304,,,,,,,,,9\n";
  auto res = parse_tracker_csv(csv, kToyPopulation, tiny_options());
  const auto& s = res.countries.at("Toyland");
  REQUIRE(s.size() == 4);
  CHECK(s.npis[0].levels[0] == 0);
  CHECK(s.npis[0].levels[1] == 2);
  CHECK(s.npis[1].levels[0] == 3);
  CHECK(s.npis[2] == s.npis[1]);
  CHECK(s.npis[3] == s.npis[1]);
  CHECK(s.new_cases == std::vector<std::int64_t>{5, 2, 0, 2});
  CHECK(std::any_of(s.flags.begin(), s.flags.end(),
                    [](const auto& f) { return f.find("missing day") != std::string::npos; }));
}

TEST_CASE("load: pinned snapshot") {
  auto pop = load_population_csv(std::string(ESP_DATA_DIR) + "/population.csv");
  auto res = load_csv(std::string(ESP_DATA_DIR) + "/oxcgrt_snapshot.csv", pop);
  CHECK(res.row_errors.empty());
  // Fixture recorded from ingesting data/oxcgrt_snapshot.csv.
  CHECK(res.countries.size() == kSnapshotCountries);
  CHECK(res.countries.size() >= 20);
  CHECK(res.countries.count("Kosovo") == 0);
  CHECK(res.countries.count("Iceland") == 0);
  CHECK(res.countries.count("Malta") == 0);
  for (const auto& [id, s] : res.countries) {
    for (std::size_t i = 1; i < s.size(); ++i) {
      CHECK(s.dates[i] - s.dates[i - 1] == std::chrono::days{1});
      CHECK(s.cumulative[i] == s.cumulative[i - 1] + s.new_cases[i]);
    }
    CHECK(usable_days(s) >= 36);
  }
  CHECK(res.countries.at("Italy").flags.size() == 1);
}

TEST_CASE("smooth: examples") {
  std::vector<std::int64_t> sevens(10, 7);
  auto z = smooth(sevens);
  for (std::size_t i = 0; i < 6; ++i) CHECK(std::isnan(z[i]));
  for (std::size_t i = 6; i < 10; ++i) CHECK(z[i] == 7.0);

  auto spike = smooth(std::vector<std::int64_t>{0, 0, 0, 0, 0, 0, 7});
  CHECK(spike[6] == 1.0);

  std::vector<std::int64_t> ramp(14);
  std::iota(ramp.begin(), ramp.end(), 1);
  auto zr = smooth(ramp);
  // Window sums by hand: mean of (n-5..n+1) for 1-based values.
  const std::vector<double> expected{4, 5, 6, 7, 8, 9, 10, 11};
  for (std::size_t i = 0; i < expected.size(); ++i) CHECK(zr[6 + i] == expected[i]);

  CHECK_THROWS_WITH_AS(smooth(std::vector<std::int64_t>{1, 2, 3}),
                       doctest::Contains("insufficient history"), DataError);
}

TEST_CASE("smooth: a window depends only on its own days") {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> v(0, 1000);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::int64_t> a(20 + trial % 7), b(15 + trial % 5);
    for (auto& e : a) e = v(rng);
    for (auto& e : b) e = v(rng);
    auto joined = a;
    joined.insert(joined.end(), b.begin(), b.end());
    auto za = smooth(a), zb = smooth(b), zj = smooth(joined);
    for (std::size_t i = 6; i < a.size(); ++i) CHECK(zj[i] == za[i]);
    for (std::size_t i = 6; i < b.size(); ++i) CHECK(zj[a.size() + i] == zb[i]);
  }
}

TEST_CASE("ratio_targets: examples") {
  SUBCASE("no growth, negligible immunity") {
    auto s = make_series(std::vector<std::int64_t>(10, 5), 1'000'000'000);
    s.cumulative.assign(10, 0);  // y_{n-1} = 0
    auto r = ratio_targets(s);
    REQUIRE(r[7].has_value());
    CHECK(*r[7] == 1.0);
  }
  SUBCASE("half the population infected doubles the ratio") {
    CountrySeries s;
    s.id = "Half";
    s.population = 1000;
    s.dates = {parse_yyyymmdd("20200301"), parse_yyyymmdd("20200302")};
    s.new_cases = {10, 10};
    s.cumulative = {500, 510};
    s.smoothed = {10.0, 10.0};
    s.npis.resize(2);
    auto r = ratio_targets(s);
    REQUIRE(r[1].has_value());
    CHECK(*r[1] == doctest::Approx(2.0).epsilon(1e-15));
  }
  SUBCASE("zero previous smoothed cases skips the day") {
    auto s = make_series({0, 0, 0, 0, 0, 0, 0, 7, 7}, 1000);
    auto r = ratio_targets(s);
    CHECK_FALSE(r[7].has_value());
    CHECK(r[8].has_value());
  }
  SUBCASE("exhausted population is an error") {
    auto s = make_series(std::vector<std::int64_t>(9, 200), 1000);
    CHECK_THROWS_WITH_AS(ratio_targets(s), doctest::Contains("population exhausted"), DataError);
  }
  SUBCASE("non-positive population is a configuration error") {
    auto s = make_series(std::vector<std::int64_t>(9, 1), 0);
    CHECK_THROWS_AS(ratio_targets(s), ConfigError);
  }
}

TEST_CASE("build_dataset: counting, clipping and determinism") {
  // 43 raw days give ratio targets on days 7..42: 36 usable days.
  auto s = outbreak_series(43, 1);
  REQUIRE(usable_days(s) == 36);
  SeriesMap m{{s.id, s}};
  DatasetOptions opt;
  opt.validation_fraction = 0.0;
  auto split = build_dataset(m, opt);
  CHECK(split.train.size() + split.validation.size() == 1);
  CHECK(split.test.size() == 14);
  const auto& sample = split.train.front();
  CHECK(sample.actions.size() == 21);
  CHECK(sample.ratios.size() == 21);
  CHECK(sample.date == s.dates[28]);
  CHECK(sample.actions.front() == s.npis[7]);
  CHECK(sample.actions.back() == s.npis[27]);

  SUBCASE("targets clipped outside test only") {
    auto spiky = outbreak_series(80, 3);
    spiky.new_cases[40] = 50'000;  // huge jump -> raw ratio >> 2
    spiky.new_cases[75] = 50'000;
    std::partial_sum(spiky.new_cases.begin(), spiky.new_cases.end(), spiky.cumulative.begin());
    spiky.smoothed = smooth(spiky.new_cases);
    auto sp = build_dataset(SeriesMap{{spiky.id, spiky}}, DatasetOptions{});
    bool saw_clipped = false, saw_raw_test = false;
    for (const auto* part : {&sp.train, &sp.validation}) {
      for (const auto& t : *part) {
        CHECK(t.target <= 2.0);
        CHECK(t.target >= 0.0);
        if (t.raw_target > 2.0) {
          saw_clipped = true;
          CHECK(t.target == 2.0);
        }
      }
    }
    for (const auto& t : sp.test) {
      CHECK(t.target == t.raw_target);
      if (t.raw_target > 2.0) saw_raw_test = true;
    }
    CHECK(saw_clipped);
    CHECK(saw_raw_test);
  }
}

TEST_CASE("build_dataset: same seed gives identical split; partitions are disjoint") {
  SeriesMap m;
  for (int c = 0; c < 4; ++c) {
    auto s = outbreak_series(90, 10 + c, "C" + std::to_string(c));
    m.emplace(s.id, s);
  }
  DatasetOptions opt;
  opt.seed = 42;
  auto a = build_dataset(m, opt);
  auto b = build_dataset(m, opt);
  REQUIRE(a.train.size() == b.train.size());
  for (std::size_t i = 0; i < a.train.size(); ++i) {
    CHECK(a.train[i].date == b.train[i].date);
    CHECK(a.train[i].country == b.train[i].country);
  }
  std::size_t emitted = 0;
  for (const auto& [id, s] : m) emitted += country_samples(s).size();
  CHECK(a.total() == emitted);
  std::set<std::pair<std::string, int>> seen;
  for (const auto* part : {&a.train, &a.validation, &a.test}) {
    for (const auto& t : *part) {
      CHECK(seen.insert({t.country, t.date.time_since_epoch().count()}).second);
    }
  }
  CHECK(a.validation.size() == static_cast<std::size_t>(
                                   std::llround(0.1 * double(a.train.size() + a.validation.size()))));
  CHECK_THROWS_AS(build_dataset(SeriesMap{}, opt), DataError);
}

TEST_CASE("ratio targets round-trip to daily cases on the pinned snapshot") {
  auto pop = load_population_csv(std::string(ESP_DATA_DIR) + "/population.csv");
  auto res = load_csv(std::string(ESP_DATA_DIR) + "/oxcgrt_snapshot.csv", pop);
  std::size_t checked = 0;
  for (const auto& [id, s] : res.countries) {
    auto r = ratio_targets(s);
    for (std::size_t n = kSmoothingWindow; n < s.size(); ++n) {
      if (!r[n]) continue;
      const double x = cases_from_ratio(*r[n], double(s.population), double(s.cumulative[n - 1]),
                                        s.smoothed[n - 1], double(s.new_cases[n - 7]));
      const double truth = double(s.new_cases[n]);
      CHECK(std::abs(x - truth) <= 1e-9 * std::max(1.0, truth));
      ++checked;
    }
  }
  CHECK(checked > 2000);
}
