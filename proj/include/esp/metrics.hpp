#pragma once

// Predictor comparison over a held-out window: one-step ratio MAE, raw and
// normalised case MAE of the full forecast, and mean rank across methods.

#include <iosfwd>
#include <string>
#include <vector>

#include "esp/data.hpp"
#include "esp/forecast.hpp"

namespace esp {

/// Ground truth for one country: the context ends on the last training day n.
struct CountryTruth {
  std::string country;
  ForecastContext context;
  std::vector<NpiVector> npis;        // observed levels on n .. n+T*-1
  std::vector<double> true_cases;     // x on n+1 .. n+T*
  std::vector<TrainingSample> one_step;  // targets dated n+1 .. n+T* with defined windows
};

/// Truth for the first `countries` entries of `order` whose series reach
/// past the test window; short or unusable countries are skipped with a
/// warning.
std::vector<CountryTruth> build_eval_set(const SeriesMap& series,
                                         const std::vector<std::string>& order,
                                         int countries = 20, int test_days = kTestDays,
                                         std::vector<std::string>* warnings = nullptr);

struct MetricRow {
  std::string method;
  double normalized_case_mae = 0.0;
  double raw_case_mae = 0.0;  // summed over countries
  double mean_rank = 0.0;
  double one_step_r_mae = 0.0;
};

struct CountryBreakdown {
  std::string method;
  std::string country;
  double true_cases = 0.0;
  double predicted_cases = 0.0;
  double abs_error = 0.0;
  double normalized_error = 0.0;
  double rank = 0.0;
  bool zero_truth = false;  // normalised with denominator 1
};

struct MetricReport {
  std::vector<MetricRow> rows;  // one per method, input order
  std::vector<CountryBreakdown> breakdown;
};

/// Ranks from 0, ties share the mean of their positions.
std::vector<double> fractional_ranks(const std::vector<double>& values);

/// The metric formulas given per-method, per-country absolute case errors,
/// the true case totals and the one-step MAEs.
MetricReport metrics_from_errors(const std::vector<std::string>& methods,
                                 const std::vector<std::vector<double>>& case_errors,
                                 const std::vector<double>& true_totals,
                                 const std::vector<double>& one_step_mae,
                                 const std::vector<std::string>& countries = {});

struct NamedPredictor {
  std::string name;
  const RatioPredictor* predictor = nullptr;
};

MetricReport compute_metrics(const std::vector<NamedPredictor>& methods,
                             const std::vector<CountryTruth>& truth);

struct TrialSummaryRow {
  std::string method;
  int trials = 0;
  MetricRow mean;
  MetricRow stderr_;
};

/// Mean and standard error (sample sd / sqrt(n)) per method across trials.
std::vector<TrialSummaryRow> summarize_trials(const std::vector<MetricReport>& trials);

void write_metrics_csv(std::ostream& os, const MetricReport& report);
void write_breakdown_csv(std::ostream& os, const MetricReport& report);
void write_summary_csv(std::ostream& os, const std::vector<TrialSummaryRow>& rows);
/// Fixed-width table, mean ± stderr.
void write_summary_table(std::ostream& os, const std::vector<TrialSummaryRow>& rows);

}  // namespace esp
