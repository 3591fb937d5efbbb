#include "esp/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_map>

#include "esp/error.hpp"

namespace esp {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(field));
      field.clear();
    } else if (c != '\r') {
      field.push_back(c);
    }
  }
  out.push_back(std::move(field));
  return out;
}

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return {};
  auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

std::optional<double> parse_number(const std::string& cell) {
  std::string t = trim(cell);
  if (t.empty()) return std::nullopt;
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(t, &used);
  } catch (const std::exception&) {
    throw DataError("non-numeric value '" + t + "'");
  }
  if (used != t.size() || !std::isfinite(v)) {
    throw DataError("non-numeric value '" + t + "'");
  }
  return v;
}

struct RawRow {
  std::size_t line = 0;
  Date date{};
  std::string code;
  std::array<std::optional<int>, kNumNpis> npis{};
  std::optional<double> cumulative;
};

}  // namespace

Date parse_yyyymmdd(const std::string& text) {
  std::string t = trim(text);
  if (t.size() != 8 || !std::all_of(t.begin(), t.end(), ::isdigit)) {
    throw DataError("bad date '" + text + "', expected YYYYMMDD");
  }
  int y = std::stoi(t.substr(0, 4));
  unsigned m = static_cast<unsigned>(std::stoi(t.substr(4, 2)));
  unsigned d = static_cast<unsigned>(std::stoi(t.substr(6, 2)));
  std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m},
                                  std::chrono::day{d}};
  if (!ymd.ok()) throw DataError("invalid calendar date '" + text + "'");
  return Date{ymd};
}

std::string format_yyyymmdd(Date d) {
  std::chrono::year_month_day ymd{d};
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04d%02u%02u", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()),
                static_cast<unsigned>(ymd.day()));
  return buf;
}

PopulationTable load_population_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open population table " + path.string());
  PopulationTable table;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (row == 1 || trim(line).empty()) continue;
    auto cells = split_csv_line(line);
    if (cells.size() < 2) {
      throw DataError("population row needs 'country,population'", row);
    }
    std::optional<double> p;
    try {
      p = parse_number(cells[1]);
    } catch (const DataError& e) {
      throw DataError(e.what(), row);
    }
    if (!p || *p <= 0) throw ConfigError("population must be positive for " + cells[0]);
    table[trim(cells[0])] = static_cast<std::int64_t>(std::llround(*p));
  }
  return table;
}

std::vector<double> smooth(std::span<const std::int64_t> new_cases, int window) {
  if (window < 1) throw ConfigError("smoothing window must be >= 1");
  const auto n = new_cases.size();
  if (n < static_cast<std::size_t>(window)) {
    throw DataError("insufficient history: series of length " + std::to_string(n) +
                    " is shorter than the smoothing window " + std::to_string(window));
  }
  std::vector<double> z(n, std::numeric_limits<double>::quiet_NaN());
  std::int64_t sum = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sum += new_cases[i];
    if (i >= static_cast<std::size_t>(window)) sum -= new_cases[i - window];
    if (i + 1 >= static_cast<std::size_t>(window)) {
      z[i] = static_cast<double>(sum) / window;
    }
  }
  return z;
}

std::vector<std::optional<double>> ratio_targets(const CountrySeries& s) {
  if (s.population <= 0) throw ConfigError("population must be positive for " + s.id);
  const double pop = static_cast<double>(s.population);
  std::vector<std::optional<double>> out(s.size());
  for (std::size_t n = 1; n < s.size(); ++n) {
    const double prev_z = s.smoothed[n - 1];
    if (!(prev_z > 0.0) || std::isnan(s.smoothed[n])) continue;
    const double prev_y = static_cast<double>(s.cumulative[n - 1]);
    if (prev_y >= pop) {
      throw DataError("population exhausted in " + s.id + " on " +
                      format_yyyymmdd(s.dates[n]));
    }
    out[n] = pop * s.smoothed[n] / ((pop - prev_y) * prev_z);
  }
  return out;
}

std::size_t usable_days(const CountrySeries& series) {
  auto r = ratio_targets(series);
  return static_cast<std::size_t>(
      std::count_if(r.begin(), r.end(), [](const auto& v) { return v.has_value(); }));
}

double cases_from_ratio(double ratio, double population, double prev_cumulative,
                        double prev_smoothed, double case_k_days_ago, int window) {
  return (ratio * (population - prev_cumulative) / population - 1.0) * window *
             prev_smoothed +
         case_k_days_ago;
}

LoadResult parse_tracker_csv(const std::string& text, const PopulationTable& population,
                             const LoadOptions& options) {
  LoadResult result;
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty CSV", 1);
  auto header = split_csv_line(line);
  std::unordered_map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col[trim(header[i])] = i;
  auto need = [&](const std::string& name) -> std::size_t {
    auto it = col.find(name);
    if (it == col.end()) throw DataError("missing required column '" + name + "'", 1);
    return it->second;
  };
  const auto c_country = need(options.schema.country);
  const auto c_date = need(options.schema.date);
  const auto c_cases = need(options.schema.cumulative_cases);
  std::array<std::size_t, kNumNpis> c_npi{};
  for (std::size_t k = 0; k < kNumNpis; ++k) c_npi[k] = need(options.schema.npis[k]);
  std::optional<std::size_t> c_code;
  if (auto it = col.find(options.schema.country_code); it != col.end()) c_code = it->second;

  std::map<std::string, std::vector<RawRow>> grouped;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    auto cells = split_csv_line(line);
    if (cells.size() != header.size()) {
      result.row_errors.push_back({lineno, "expected " + std::to_string(header.size()) +
                                               " fields, found " +
                                               std::to_string(cells.size())});
      continue;
    }
    try {
      RawRow row;
      row.line = lineno;
      row.date = parse_yyyymmdd(cells[c_date]);
      if (c_code) row.code = trim(cells[*c_code]);
      for (std::size_t k = 0; k < kNumNpis; ++k) {
        auto v = parse_number(cells[c_npi[k]]);
        if (v) {
          int lvl = static_cast<int>(std::lround(*v));
          if (lvl < 0 || lvl > kNpiMax[k]) {
            throw DataError(std::string(kNpiNames[k]) + " level " + std::to_string(lvl) +
                            " outside [0," + std::to_string(kNpiMax[k]) + "]");
          }
          row.npis[k] = lvl;
        }
      }
      row.cumulative = parse_number(cells[c_cases]);
      std::string country = trim(cells[c_country]);
      if (country.empty()) throw DataError("empty country name");
      grouped[country].push_back(std::move(row));
    } catch (const DataError& e) {
      result.row_errors.push_back({lineno, e.what()});
    }
  }

  for (auto& [country, rows] : grouped) {
    auto pop_it = population.find(country);
    if (pop_it == population.end()) {
      result.warnings.push_back("country '" + country +
                                "' not in population table, skipped");
      continue;
    }
    std::sort(rows.begin(), rows.end(),
              [](const RawRow& a, const RawRow& b) { return a.date < b.date; });

    CountrySeries s;
    s.id = country;
    s.code = rows.front().code;
    s.population = pop_it->second;

    NpiVector carried{};
    double carried_cum = 0.0;
    std::int64_t prev_cum_reported = 0;
    bool revision_flagged = false;
    std::size_t gaps = 0;
    std::size_t i = 0;
    for (Date d = rows.front().date; d <= rows.back().date; d += std::chrono::days{1}) {
      const RawRow* row = nullptr;
      while (i < rows.size() && rows[i].date < d) ++i;
      if (i < rows.size() && rows[i].date == d) {
        row = &rows[i];
        if (i + 1 < rows.size() && rows[i + 1].date == d) {
          result.row_errors.push_back({rows[i + 1].line, "duplicate date for " + country});
        }
      }
      if (row != nullptr) {
        for (std::size_t k = 0; k < kNumNpis; ++k) {
          if (row->npis[k]) carried.levels[k] = *row->npis[k];
        }
        if (row->cumulative) carried_cum = *row->cumulative;
      } else {
        ++gaps;
      }
      auto cum = static_cast<std::int64_t>(std::llround(carried_cum));
      std::int64_t diff = s.dates.empty() ? cum : cum - prev_cum_reported;
      if (diff < 0) {
        if (!revision_flagged) {
          s.flags.push_back("cumulative cases decrease on " + format_yyyymmdd(d) +
                            "; negative differences floored at 0");
          revision_flagged = true;
        }
        diff = 0;
      }
      prev_cum_reported = cum;
      s.dates.push_back(d);
      s.new_cases.push_back(diff);
      s.npis.push_back(carried);
    }
    if (gaps > 0) {
      s.flags.push_back(std::to_string(gaps) +
                        " missing day(s) filled with carried NPIs and zero cases");
    }
    s.cumulative.resize(s.new_cases.size());
    std::partial_sum(s.new_cases.begin(), s.new_cases.end(), s.cumulative.begin());

    if (s.size() < static_cast<std::size_t>(options.smoothing_window)) {
      result.dropped.push_back(country);
      result.warnings.push_back("country '" + country + "' has only " +
                                std::to_string(s.size()) + " days, dropped");
      continue;
    }
    s.smoothed = smooth(s.new_cases, options.smoothing_window);
    std::size_t usable = 0;
    try {
      usable = usable_days(s);
    } catch (const DataError& e) {
      result.dropped.push_back(country);
      result.warnings.push_back("country '" + country + "' dropped: " + e.what());
      continue;
    }
    if (usable < static_cast<std::size_t>(options.min_usable_days)) {
      result.dropped.push_back(country);
      result.warnings.push_back("country '" + country + "' has " + std::to_string(usable) +
                                " usable days (< " +
                                std::to_string(options.min_usable_days) + "), dropped");
      continue;
    }
    for (const auto& f : s.flags) result.warnings.push_back(country + ": " + f);
    result.countries.emplace(country, std::move(s));
  }
  return result;
}

LoadResult load_csv(const std::filesystem::path& path, const PopulationTable& population,
                    const LoadOptions& options) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_tracker_csv(buf.str(), population, options);
}

std::vector<TrainingSample> country_samples(const CountrySeries& series, int history) {
  auto ratios = ratio_targets(series);
  std::vector<TrainingSample> out;
  const auto n = series.size();
  for (std::size_t t = static_cast<std::size_t>(history); t < n; ++t) {
    bool ok = ratios[t].has_value();
    for (std::size_t j = t - history; ok && j < t; ++j) ok = ratios[j].has_value();
    if (!ok) continue;
    TrainingSample s;
    s.actions.assign(series.npis.begin() + static_cast<std::ptrdiff_t>(t - history),
                     series.npis.begin() + static_cast<std::ptrdiff_t>(t));
    s.ratios.reserve(history);
    for (std::size_t j = t - history; j < t; ++j) s.ratios.push_back(*ratios[j]);
    s.target = *ratios[t];
    s.raw_target = *ratios[t];
    s.country = series.id;
    s.date = series.dates[t];
    out.push_back(std::move(s));
  }
  return out;
}

DatasetSplit build_dataset(const SeriesMap& series, const DatasetOptions& opt) {
  if (series.empty()) throw DataError("build_dataset: no countries");
  if (opt.validation_fraction < 0.0 || opt.validation_fraction >= 1.0) {
    throw ConfigError("validation fraction must be in [0, 1)");
  }
  DatasetSplit split;
  split.split_seed = opt.seed;
  std::vector<TrainingSample> pool;
  for (const auto& [id, s] : series) {
    if (s.dates.empty()) continue;
    const Date test_start = s.dates.back() - std::chrono::days{opt.test_days - 1};
    for (auto& sample : country_samples(s, opt.history)) {
      if (sample.date >= test_start) {
        split.test.push_back(std::move(sample));
      } else {
        sample.target = std::clamp(sample.raw_target, opt.clip_low, opt.clip_high);
        pool.push_back(std::move(sample));
      }
    }
  }
  if (pool.empty() && split.test.empty()) throw DataError("build_dataset: no samples");

  std::mt19937_64 rng(opt.seed);
  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  auto n_val = static_cast<std::size_t>(std::llround(opt.validation_fraction *
                                                     static_cast<double>(pool.size())));
  if (opt.validation_fraction > 0.0 && n_val == 0 && pool.size() >= 2) n_val = 1;
  std::vector<bool> is_val(pool.size(), false);
  for (std::size_t i = 0; i < n_val; ++i) is_val[order[i]] = true;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    (is_val[i] ? split.validation : split.train).push_back(std::move(pool[i]));
  }
  return split;
}

std::vector<std::string> countries_by_cases(const SeriesMap& series) {
  std::vector<std::string> ids;
  for (const auto& [id, s] : series) ids.push_back(id);
  std::stable_sort(ids.begin(), ids.end(), [&](const auto& a, const auto& b) {
    return series.at(a).total_cases() > series.at(b).total_cases();
  });
  return ids;
}

}  // namespace esp
