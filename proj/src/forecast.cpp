#include "esp/forecast.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>

#include "esp/error.hpp"

namespace esp {

ForecastContext make_context(const CountrySeries& series, std::size_t last_index, int history) {
  if (last_index >= series.size()) throw DataError("context end beyond series for " + series.id);
  const auto h = static_cast<std::size_t>(history);
  if (last_index + 1 < h) throw DataError("not enough history for context in " + series.id);
  const auto ratios = ratio_targets(series);
  ForecastContext ctx;
  ctx.country = series.id;
  ctx.last_date = series.dates[last_index];
  ctx.population = series.population;
  const std::size_t first = last_index + 1 - h;
  for (std::size_t i = first; i <= last_index; ++i) {
    if (!ratios[i]) {
      throw DataError("ratio undefined on " + format_yyyymmdd(series.dates[i]) + " in " +
                      series.id);
    }
    ctx.actions.push_back(series.npis[i]);
    ctx.ratios.push_back(*ratios[i]);
  }
  const std::size_t keep = std::min<std::size_t>(last_index + 1, kActiveWindow);
  if (keep < static_cast<std::size_t>(kSmoothingWindow)) {
    throw DataError("fewer than 7 days of cases before context end in " + series.id);
  }
  for (std::size_t i = last_index + 1 - keep; i <= last_index; ++i) {
    ctx.recent_cases.push_back(static_cast<double>(series.new_cases[i]));
  }
  ctx.cumulative = static_cast<double>(series.cumulative[last_index]);
  return ctx;
}

ForecastContext make_context(const CountrySeries& series, Date last_date, int history) {
  auto it = std::find(series.dates.begin(), series.dates.end(), last_date);
  if (it == series.dates.end()) {
    throw NotFoundError("date " + format_yyyymmdd(last_date) + " not in series for " + series.id,
                        format_yyyymmdd(last_date));
  }
  return make_context(series, static_cast<std::size_t>(it - series.dates.begin()), history);
}

ForecastRequest hold_current_npis(ForecastContext context, int horizon) {
  ForecastRequest req;
  req.schedule.assign(static_cast<std::size_t>(std::max(horizon, 0)), context.actions.back());
  req.horizon = horizon;
  req.context = std::move(context);
  return req;
}

namespace {

void validate(const ForecastRequest& r) {
  const auto& c = r.context;
  if (c.actions.size() != c.ratios.size() || c.actions.empty()) {
    throw ShapeError("context windows must be non-empty and of equal length");
  }
  if (c.recent_cases.size() < static_cast<std::size_t>(kSmoothingWindow)) {
    throw ShapeError("context needs at least 7 days of recent cases");
  }
  if (c.population <= 0) throw ConfigError("population must be positive");
  if (r.horizon < 0 || r.horizon > kMaxHorizon) {
    throw ConfigError("horizon must be in [0, " + std::to_string(kMaxHorizon) + "]");
  }
  if (!r.policy && r.schedule.size() < static_cast<std::size_t>(r.horizon)) {
    throw ConfigError("NPI schedule has " + std::to_string(r.schedule.size()) +
                      " days, horizon is " + std::to_string(r.horizon));
  }
  for (const auto& o : r.overrides) {
    if (o.npi < 0 || o.npi >= static_cast<int>(kNumNpis)) throw ConfigError("override NPI index out of range");
  }
}

struct RolloutState {
  std::vector<NpiVector> actions;
  std::vector<double> ratios;
  std::vector<double> cases;  // observed then predicted, oldest first
  double cumulative = 0.0;
  double population = 0.0;
};

}  // namespace

std::vector<ForecastResult> rollout_batch(const RatioPredictor& predictor,
                                          std::span<const ForecastRequest> requests) {
  std::vector<ForecastResult> results(requests.size());
  std::vector<RolloutState> state(requests.size());
  int max_h = 0;
  for (std::size_t b = 0; b < requests.size(); ++b) {
    const auto& r = requests[b];
    validate(r);
    state[b].actions = r.context.actions;
    state[b].ratios = r.context.ratios;
    state[b].cases = r.context.recent_cases;
    state[b].cumulative = r.context.cumulative;
    state[b].population = static_cast<double>(r.context.population);
    results[b].country = r.context.country;
    results[b].start_date = r.context.last_date;
    max_h = std::max(max_h, r.horizon);
  }
  constexpr double K = kSmoothingWindow;
  std::vector<std::size_t> live;
  std::vector<PredictorInput> inputs;
  std::vector<double> r_hat;
  for (int step = 0; step < max_h; ++step) {
    live.clear();
    inputs.clear();
    for (std::size_t b = 0; b < requests.size(); ++b) {
      const auto& req = requests[b];
      if (step >= req.horizon) continue;
      auto& st = state[b];
      NpiVector npi = req.policy ? req.policy(st.ratios) : req.schedule[static_cast<std::size_t>(step)];
      for (const auto& o : req.overrides) {
        if (o.day == step) npi.levels[static_cast<std::size_t>(o.npi)] = o.level;
      }
      if (step == 0) {
        st.actions.back() = npi;
      } else {
        std::rotate(st.actions.begin(), st.actions.begin() + 1, st.actions.end());
        st.actions.back() = npi;
      }
      results[b].npis.push_back(npi);
      live.push_back(b);
      inputs.push_back({st.actions, st.ratios});
    }
    r_hat.assign(inputs.size(), 0.0);
    predictor.predict_batch(inputs, r_hat);
    for (std::size_t j = 0; j < live.size(); ++j) {
      const auto b = live[j];
      auto& st = state[b];
      const double ratio = r_hat[j];
      if (!std::isfinite(ratio)) throw NumericalError("predictor returned a non-finite ratio");
      const auto n = st.cases.size();
      double z_prev = 0.0;
      for (std::size_t i = n - kSmoothingWindow; i < n; ++i) z_prev += st.cases[i];
      z_prev /= K;
      const double x_k_ago = st.cases[n - kSmoothingWindow];
      double x = 0.0;
      if (st.cumulative < st.population) {
        x = cases_from_ratio(ratio, st.population, st.cumulative, z_prev, x_k_ago);
        x = std::clamp(x, 0.0, st.population - st.cumulative);
      }
      st.cumulative += x;
      st.cases.push_back(x);
      std::rotate(st.ratios.begin(), st.ratios.begin() + 1, st.ratios.end());
      st.ratios.back() = ratio;

      double active = 0.0;
      const auto m = st.cases.size();
      for (std::size_t i = m - std::min<std::size_t>(m, kActiveWindow); i < m; ++i) active += st.cases[i];
      results[b].days.push_back({requests[b].context.last_date + std::chrono::days{step + 1},
                                 ratio, x, st.cumulative, active});
    }
  }
  return results;
}

ForecastResult rollout(const RatioPredictor& predictor, const ForecastRequest& request) {
  return std::move(rollout_batch(predictor, std::span<const ForecastRequest>(&request, 1)).front());
}

std::vector<double> active_cases(std::span<const double> x, int window) {
  std::vector<double> out(x.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sum += x[i];
    if (i >= static_cast<std::size_t>(window)) sum -= x[i - static_cast<std::size_t>(window)];
    out[i] = sum;
  }
  return out;
}

void write_forecast_csv(std::ostream& os, const ForecastResult& result) {
  os << "date,r_hat,new_cases,cumulative,active\n";
  os << std::setprecision(10);
  for (const auto& d : result.days) {
    os << format_yyyymmdd(d.date) << ',' << d.r_hat << ',' << d.new_cases << ','
       << d.cumulative << ',' << d.active << '\n';
  }
}

}  // namespace esp
