#include "esp/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>

#include "esp/error.hpp"

namespace esp {

std::vector<CountryTruth> build_eval_set(const SeriesMap& series,
                                         const std::vector<std::string>& order, int countries,
                                         int test_days, std::vector<std::string>* warnings) {
  std::vector<CountryTruth> out;
  auto warn = [&](const std::string& m) {
    if (warnings) warnings->push_back(m);
  };
  for (const auto& id : order) {
    if (static_cast<int>(out.size()) >= countries) break;
    auto it = series.find(id);
    if (it == series.end()) {
      warn(id + ": not in series");
      continue;
    }
    const auto& s = it->second;
    if (s.size() < static_cast<std::size_t>(test_days + kHistoryDays + 1)) {
      warn(id + ": too short for evaluation");
      continue;
    }
    const std::size_t n = s.size() - 1 - static_cast<std::size_t>(test_days);
    CountryTruth t;
    t.country = id;
    try {
      t.context = make_context(s, n);
    } catch (const DataError& e) {
      warn(id + ": " + e.what());
      continue;
    }
    for (int i = 0; i < test_days; ++i) {
      t.npis.push_back(s.npis[n + static_cast<std::size_t>(i)]);
      t.true_cases.push_back(static_cast<double>(s.new_cases[n + 1 + static_cast<std::size_t>(i)]));
    }
    for (auto& sample : country_samples(s)) {
      if (sample.date > s.dates[n]) t.one_step.push_back(std::move(sample));
    }
    out.push_back(std::move(t));
  }
  if (static_cast<int>(out.size()) < countries) {
    warn("evaluation set has " + std::to_string(out.size()) + " countries, wanted " +
         std::to_string(countries));
  }
  return out;
}

std::vector<double> fractional_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> rank(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = r;
    i = j + 1;
  }
  return rank;
}

MetricReport metrics_from_errors(const std::vector<std::string>& methods,
                                 const std::vector<std::vector<double>>& err,
                                 const std::vector<double>& truth,
                                 const std::vector<double>& one_step,
                                 const std::vector<std::string>& countries) {
  const auto m = methods.size();
  const auto c = truth.size();
  if (err.size() != m || one_step.size() != m) throw ShapeError("one error row per method");
  for (const auto& row : err) {
    if (row.size() != c) throw ShapeError("one case error per country");
  }
  if (c == 0) throw DataError("no evaluation countries");
  MetricReport rep;
  rep.rows.resize(m);
  for (std::size_t k = 0; k < m; ++k) {
    rep.rows[k].method = methods[k];
    rep.rows[k].one_step_r_mae = one_step[k];
  }
  for (std::size_t j = 0; j < c; ++j) {
    std::vector<double> col(m);
    for (std::size_t k = 0; k < m; ++k) col[k] = err[k][j];
    const auto ranks = fractional_ranks(col);
    const bool zero = truth[j] < 1.0;
    const double denom = std::max(truth[j], 1.0);
    for (std::size_t k = 0; k < m; ++k) {
      rep.rows[k].raw_case_mae += err[k][j];
      rep.rows[k].normalized_case_mae += err[k][j] / denom;
      rep.rows[k].mean_rank += ranks[k];
      CountryBreakdown b;
      b.method = methods[k];
      b.country = j < countries.size() ? countries[j] : std::to_string(j);
      b.true_cases = truth[j];
      b.abs_error = err[k][j];
      b.normalized_error = err[k][j] / denom;
      b.rank = ranks[k];
      b.zero_truth = zero;
      rep.breakdown.push_back(b);
    }
  }
  for (auto& r : rep.rows) {
    r.normalized_case_mae /= static_cast<double>(c);
    r.mean_rank /= static_cast<double>(c);
  }
  return rep;
}

MetricReport compute_metrics(const std::vector<NamedPredictor>& methods,
                             const std::vector<CountryTruth>& truth) {
  if (methods.empty()) throw ConfigError("no methods to evaluate");
  std::vector<std::string> names, countries;
  std::vector<std::vector<double>> err(methods.size());
  std::vector<std::vector<double>> predicted(methods.size());
  std::vector<double> totals, one_step(methods.size(), 0.0);
  for (const auto& t : truth) {
    countries.push_back(t.country);
    totals.push_back(std::accumulate(t.true_cases.begin(), t.true_cases.end(), 0.0));
  }
  for (std::size_t k = 0; k < methods.size(); ++k) {
    const auto& p = *methods[k].predictor;
    names.push_back(methods[k].name);
    std::vector<ForecastRequest> reqs;
    double abs_sum = 0.0;
    std::size_t count = 0;
    for (const auto& t : truth) {
      ForecastRequest r;
      r.context = t.context;
      r.schedule = t.npis;
      r.horizon = static_cast<int>(t.true_cases.size());
      reqs.push_back(std::move(r));
      std::vector<PredictorInput> in;
      for (const auto& s : t.one_step) in.push_back({s.actions, s.ratios});
      if (in.empty()) continue;
      std::vector<double> out(in.size());
      p.predict_batch(in, out);
      for (std::size_t i = 0; i < in.size(); ++i) abs_sum += std::abs(out[i] - t.one_step[i].raw_target);
      count += in.size();
    }
    one_step[k] = count ? abs_sum / static_cast<double>(count) : 0.0;
    const auto results = rollout_batch(p, reqs);
    for (std::size_t j = 0; j < truth.size(); ++j) {
      double total = 0.0;
      for (const auto& d : results[j].days) total += d.new_cases;
      predicted[k].push_back(total);
      err[k].push_back(std::abs(totals[j] - total));
    }
  }
  auto rep = metrics_from_errors(names, err, totals, one_step, countries);
  for (auto& b : rep.breakdown) {
    const auto k = static_cast<std::size_t>(std::find(names.begin(), names.end(), b.method) - names.begin());
    const auto j = static_cast<std::size_t>(std::find(countries.begin(), countries.end(), b.country) - countries.begin());
    b.predicted_cases = predicted[k][j];
  }
  return rep;
}

std::vector<TrialSummaryRow> summarize_trials(const std::vector<MetricReport>& trials) {
  std::vector<TrialSummaryRow> out;
  if (trials.empty()) return out;
  std::map<std::string, std::vector<MetricRow>> by;
  std::vector<std::string> order;
  for (const auto& t : trials) {
    for (const auto& r : t.rows) {
      if (!by.count(r.method)) order.push_back(r.method);
      by[r.method].push_back(r);
    }
  }
  for (const auto& name : order) {
    const auto& rows = by[name];
    const double n = static_cast<double>(rows.size());
    TrialSummaryRow s;
    s.method = name;
    s.trials = static_cast<int>(rows.size());
    s.mean.method = s.stderr_.method = name;
    auto stat = [&](double MetricRow::*f, double& mean, double& se) {
      mean = 0.0;
      for (const auto& r : rows) mean += r.*f;
      mean /= n;
      double ss = 0.0;
      for (const auto& r : rows) ss += (r.*f - mean) * (r.*f - mean);
      se = rows.size() > 1 ? std::sqrt(ss / (n - 1.0)) / std::sqrt(n) : 0.0;
    };
    stat(&MetricRow::normalized_case_mae, s.mean.normalized_case_mae, s.stderr_.normalized_case_mae);
    stat(&MetricRow::raw_case_mae, s.mean.raw_case_mae, s.stderr_.raw_case_mae);
    stat(&MetricRow::mean_rank, s.mean.mean_rank, s.stderr_.mean_rank);
    stat(&MetricRow::one_step_r_mae, s.mean.one_step_r_mae, s.stderr_.one_step_r_mae);
    out.push_back(s);
  }
  return out;
}

void write_metrics_csv(std::ostream& os, const MetricReport& rep) {
  os << "method,norm_case_mae,raw_case_mae,mean_rank,one_step_r_mae\n" << std::setprecision(10);
  for (const auto& r : rep.rows) {
    os << r.method << ',' << r.normalized_case_mae << ',' << r.raw_case_mae << ',' << r.mean_rank
       << ',' << r.one_step_r_mae << '\n';
  }
}

void write_breakdown_csv(std::ostream& os, const MetricReport& rep) {
  os << "method,country,true_cases,predicted_cases,abs_error,normalized_error,rank,zero_truth\n"
     << std::setprecision(10);
  for (const auto& b : rep.breakdown) {
    os << b.method << ",\"" << b.country << "\"," << b.true_cases << ',' << b.predicted_cases << ','
       << b.abs_error << ',' << b.normalized_error << ',' << b.rank << ',' << (b.zero_truth ? 1 : 0)
       << '\n';
  }
}

void write_summary_csv(std::ostream& os, const std::vector<TrialSummaryRow>& rows) {
  os << "method,trials,norm_case_mae,norm_case_mae_se,raw_case_mae,raw_case_mae_se,mean_rank,"
        "mean_rank_se,one_step_r_mae,one_step_r_mae_se\n"
     << std::setprecision(10);
  for (const auto& r : rows) {
    os << r.method << ',' << r.trials << ',' << r.mean.normalized_case_mae << ','
       << r.stderr_.normalized_case_mae << ',' << r.mean.raw_case_mae << ','
       << r.stderr_.raw_case_mae << ',' << r.mean.mean_rank << ',' << r.stderr_.mean_rank << ','
       << r.mean.one_step_r_mae << ',' << r.stderr_.one_step_r_mae << '\n';
  }
}

void write_summary_table(std::ostream& os, const std::vector<TrialSummaryRow>& rows) {
  os << std::left << std::setw(10) << "Method" << std::right << std::setw(20) << "Norm. Case MAE"
     << std::setw(26) << "Raw Case MAE" << std::setw(18) << "Mean Rank" << std::setw(20)
     << "1-step R MAE" << '\n';
  for (const auto& r : rows) {
    auto cell = [&](double m, double se, int w, int prec) {
      std::ostringstream c;
      c << std::fixed << std::setprecision(prec) << m << " ± " << se;
      os << std::setw(w) << c.str();
    };
    os << std::left << std::setw(10) << r.method << std::right;
    cell(r.mean.normalized_case_mae, r.stderr_.normalized_case_mae, 21, 2);
    cell(r.mean.raw_case_mae, r.stderr_.raw_case_mae, 27, 0);
    cell(r.mean.mean_rank, r.stderr_.mean_rank, 19, 2);
    cell(r.mean.one_step_r_mae, r.stderr_.one_step_r_mae, 21, 3);
    os << '\n';
  }
}

}  // namespace esp
