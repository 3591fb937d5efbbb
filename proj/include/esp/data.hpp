#pragma once

// Ingestion of OxCGRT-style tracker exports, case smoothing, ratio targets and
// the train/validation/test split used to fit ratio predictors.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "esp/npi.hpp"

namespace esp {

using Date = std::chrono::sys_days;

Date parse_yyyymmdd(const std::string& text);
std::string format_yyyymmdd(Date d);

inline constexpr int kSmoothingWindow = 7;
inline constexpr int kHistoryDays = 21;
inline constexpr int kTestDays = 14;

/// Daily series for one country after ingestion. All per-day vectors share
/// the length of `dates`, which are contiguous.
struct CountrySeries {
  std::string id;
  std::string code;
  std::int64_t population = 0;
  std::vector<Date> dates;
  std::vector<std::int64_t> new_cases;
  std::vector<double> smoothed;  // NaN before day K-1
  std::vector<std::int64_t> cumulative;
  std::vector<NpiVector> npis;
  std::vector<std::string> flags;

  std::size_t size() const noexcept { return dates.size(); }
  std::int64_t total_cases() const noexcept {
    return cumulative.empty() ? 0 : cumulative.back();
  }
};

using SeriesMap = std::map<std::string, CountrySeries>;
using PopulationTable = std::map<std::string, std::int64_t>;

/// Column names of the tracker export.
struct CsvSchema {
  std::string country = "CountryName";
  std::string country_code = "CountryCode";
  std::string date = "Date";
  std::array<std::string, kNumNpis> npis{
      std::string(kNpiNames[0]), std::string(kNpiNames[1]),
      std::string(kNpiNames[2]), std::string(kNpiNames[3]),
      std::string(kNpiNames[4]), std::string(kNpiNames[5]),
      std::string(kNpiNames[6]), std::string(kNpiNames[7])};
  std::string cumulative_cases = "ConfirmedCases";
};

struct RowError {
  std::size_t row = 0;  // 1-based line number in the CSV, header is line 1
  std::string message;
};

struct LoadOptions {
  CsvSchema schema;
  int smoothing_window = kSmoothingWindow;
  /// Countries with fewer days carrying a ratio target are dropped.
  int min_usable_days = kHistoryDays + kTestDays + 1;
};

struct LoadResult {
  SeriesMap countries;
  std::vector<std::string> warnings;
  std::vector<RowError> row_errors;
  std::vector<std::string> dropped;
};

PopulationTable load_population_csv(const std::filesystem::path& path);

/// Same as load_csv, over CSV text already in memory.
LoadResult parse_tracker_csv(const std::string& text,
                             const PopulationTable& population,
                             const LoadOptions& options = {});

LoadResult load_csv(const std::filesystem::path& path,
                    const PopulationTable& population,
                    const LoadOptions& options = {});

/// Trailing K-day mean. Entries before index K-1 are NaN.
std::vector<double> smooth(std::span<const std::int64_t> new_cases,
                           int window = kSmoothingWindow);

/// Susceptible-corrected growth ratio of smoothed cases,
/// R_n = P z_n / ((P - y_{n-1}) z_{n-1}). Empty where z_{n-1} is zero or
/// undefined.
std::vector<std::optional<double>> ratio_targets(const CountrySeries& series);

/// Count of days that carry a defined ratio target.
std::size_t usable_days(const CountrySeries& series);

/// Recovers x_n from a ratio through the case-recovery identity
/// x_n = (R (P - y_{n-1}) / P - 1) K z_{n-1} + x_{n-K}.
double cases_from_ratio(double ratio, double population, double prev_cumulative,
                        double prev_smoothed, double case_k_days_ago,
                        int window = kSmoothingWindow);

struct TrainingSample {
  std::vector<NpiVector> actions;  // kHistoryDays rows, oldest first
  std::vector<double> ratios;      // kHistoryDays values, oldest first
  double target = 0.0;
  double raw_target = 0.0;
  std::string country;
  Date date{};
};

struct DatasetSplit {
  std::vector<TrainingSample> train;
  std::vector<TrainingSample> validation;
  std::vector<TrainingSample> test;
  std::uint64_t split_seed = 0;

  std::size_t total() const noexcept {
    return train.size() + validation.size() + test.size();
  }
};

struct DatasetOptions {
  int history = kHistoryDays;
  double clip_low = 0.0;
  double clip_high = 2.0;
  int test_days = kTestDays;
  double validation_fraction = 0.1;
  std::uint64_t seed = 0;
};

/// All sample windows of one country, targets unclipped, in date order.
std::vector<TrainingSample> country_samples(const CountrySeries& series,
                                            int history = kHistoryDays);

DatasetSplit build_dataset(const SeriesMap& series,
                           const DatasetOptions& options = {});

/// Countries ordered by cumulative cases at the end of their series.
std::vector<std::string> countries_by_cases(const SeriesMap& series);

}  // namespace esp
