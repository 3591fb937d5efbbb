#pragma once

// Autoregressive multi-day rollout of a ratio predictor under an NPI schedule
// or a policy, with recovery of daily case counts.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "esp/data.hpp"
#include "esp/ratio_model.hpp"

namespace esp {

inline constexpr int kMaxHorizon = 365;
inline constexpr int kActiveWindow = 14;

/// Observed state of one country up to and including `last_date`.
struct ForecastContext {
  std::string country;
  Date last_date{};
  std::int64_t population = 0;
  std::vector<NpiVector> actions;     // kHistoryDays rows ending at last_date
  std::vector<double> ratios;         // kHistoryDays ratios ending at last_date
  std::vector<double> recent_cases;   // >= 7 daily cases ending at last_date
  double cumulative = 0.0;            // cumulative cases on last_date
};

/// Builds the context ending at `series.dates[last_index]`. Throws DataError
/// if any ratio in the window is undefined.
ForecastContext make_context(const CountrySeries& series, std::size_t last_index,
                             int history = kHistoryDays);
ForecastContext make_context(const CountrySeries& series, Date last_date,
                             int history = kHistoryDays);

/// Maps the most recent ratio window to the NPI levels for the current day.
using NpiPolicy = std::function<NpiVector(std::span<const double> ratio_window)>;

struct NpiOverride {
  int day = 0;  // step index, 0 = last_date
  int npi = 0;  // 0..7
  int level = 0;
};

/// Step i sets the NPIs for `last_date + i` (step 0 replaces the observed
/// levels on last_date) and predicts the ratio for `last_date + i + 1`.
struct ForecastRequest {
  ForecastContext context;
  std::vector<NpiVector> schedule;  // used when `policy` is empty
  NpiPolicy policy;
  std::vector<NpiOverride> overrides;
  int horizon = kTestDays;
};

struct ForecastDay {
  Date date{};
  double r_hat = 0.0;
  double new_cases = 0.0;
  double cumulative = 0.0;
  double active = 0.0;
};

struct ForecastResult {
  std::string country;
  Date start_date{};              // == context.last_date
  std::vector<ForecastDay> days;  // dates start_date + 1 ...
  std::vector<NpiVector> npis;    // npis[i] in effect on start_date + i
};

/// A request holding the last observed NPIs constant over the horizon.
ForecastRequest hold_current_npis(ForecastContext context, int horizon);

ForecastResult rollout(const RatioPredictor& predictor, const ForecastRequest& request);

/// Lockstep rollout of many requests; row i of every predict_batch call
/// belongs to requests[i].
std::vector<ForecastResult> rollout_batch(const RatioPredictor& predictor,
                                          std::span<const ForecastRequest> requests);

/// Trailing-window sums, partial windows summed as available.
std::vector<double> active_cases(std::span<const double> new_cases, int window = kActiveWindow);

void write_forecast_csv(std::ostream& os, const ForecastResult& result);

}  // namespace esp
