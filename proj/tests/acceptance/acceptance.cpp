// Acceptance run: one PASS/FAIL line per criterion.
//
//   esp_acceptance [--only NAME]... [--expect-fail NAME]... [--trials N] [--report FILE]
//
// Exit status is 0 when every failing criterion was named with --expect-fail.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"

#include "esp/baselines.hpp"
#include "esp/metrics.hpp"
#include "esp/rio.hpp"
#include "esp/service.hpp"
#include "fixtures.hpp"
#include "helpers.hpp"
#include "synthetic.hpp"

// After Eigen: resolv.h defines _res.
#include "httplib.h"

using namespace esp;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

class Clock {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
  }

 private:
  std::chrono::steady_clock::time_point t0_ = std::chrono::steady_clock::now();
};

class StringencyStub final : public RatioPredictor {
 public:
  double predict(std::span<const NpiVector> a, std::span<const double>) const override {
    return 1.25 - 0.5 * a.back().stringency() / kMaxStringency;
  }
  std::string name() const override { return "stub"; }
};

class FixedDistribution final : public RatioDistribution {
 public:
  FixedDistribution(double m, double v) : m_(m), v_(v) {}
  void distribution_batch(std::span<const PredictorInput> in, std::span<double> mean,
                          std::span<double> var) const override {
    for (std::size_t i = 0; i < in.size(); ++i) {
      mean[i] = m_;
      var[i] = v_;
    }
  }

 private:
  double m_, v_;
};

class ConstantPredictor final : public RatioPredictor {
 public:
  explicit ConstantPredictor(double v) : v_(v) {}
  double predict(std::span<const NpiVector>, std::span<const double>) const override { return v_; }
  std::string name() const override { return "constant"; }

 private:
  double v_;
};

/// Shared, lazily built state: the snapshot, the seed-0 model, the fitted
/// calibrator and the full-scale front.
struct State {
  std::string data_dir;
  int trials = 10;

  std::optional<SeriesMap> snapshot;
  std::optional<PredictorModel> model;
  std::optional<GpModel> gp;
  std::optional<EvolutionSnapshot> front;

  const SeriesMap& series() {
    if (!snapshot) {
      const auto pop = load_population_csv(data_dir + "/population.csv");
      snapshot = load_csv(data_dir + "/oxcgrt_snapshot.csv", pop).countries;
    }
    return *snapshot;
  }

  const PredictorModel& trained() {
    if (!model) {
      DatasetOptions o;
      o.seed = 0;
      TrainConfig cfg;
      cfg.seed = 0;
      model = train(PredictorModel::initialized(0), build_dataset(series(), o), cfg);
    }
    return *model;
  }
};

TrainingSample random_sample(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> ratio(0.5, 1.5);
  TrainingSample s;
  for (int t = 0; t < kHistoryDays; ++t) {
    s.actions.push_back(esp::testing::random_npis(rng));
    s.ratios.push_back(ratio(rng));
  }
  return s;
}

Outcome gradient(State&) {
  Clock clock;
  std::mt19937_64 rng(20);
  std::uniform_real_distribution<double> offset(0.3, 1.0);
  std::bernoulli_distribution sign(0.5);
  double worst = 0.0;
  for (int c = 0; c < 20; ++c) {
    auto model = PredictorModel::initialized(1000 + static_cast<std::uint64_t>(c));
    auto s = random_sample(rng);
    const double r = forward(model, s.actions, s.ratios).r_hat;
    s.target = r + (sign(rng) ? 1.0 : -1.0) * offset(rng);
    s.raw_target = s.target;
    worst = std::max(worst, gradient_check(model, s));
  }
  const double t = clock.seconds();
  return {worst < 1e-4 && t < 60.0,
          fmt("max relative error %.2e over 20 configurations (bound 1e-4), %.1f s", worst, t)};
}

Outcome monotonicity(State& st) {
  const auto& model = st.trained();
  Clock clock;
  DatasetOptions o;
  const auto samples = build_dataset(st.series(), o).train;
  std::mt19937_64 rng(10);
  std::uniform_int_distribution<std::size_t> pick(0, samples.size() - 1);
  std::uniform_int_distribution<int> coin(0, 2);
  int violations = 0;
  double min_gap = 1e300;
  for (int p = 0; p < 1000; ++p) {
    const auto& s = samples[pick(rng)];
    std::vector<NpiVector> lo(kHistoryDays), hi(kHistoryDays);
    bool raised = false;
    for (int t = 0; t < kHistoryDays; ++t) {
      lo[t] = esp::testing::random_npis(rng);
      hi[t] = lo[t];
      for (std::size_t k = 0; k < kNumNpis; ++k) {
        if (coin(rng) == 0) {
          hi[t].levels[k] = std::uniform_int_distribution<int>(lo[t].levels[k], kNpiMax[k])(rng);
          raised = raised || hi[t].levels[k] > lo[t].levels[k];
        }
      }
    }
    if (!raised) hi.back() = NpiVector::all_max();
    const double rh = forward(model, hi, s.ratios).r_hat;
    const double rl = forward(model, lo, s.ratios).r_hat;
    if (rh > rl) ++violations;
    min_gap = std::min(min_gap, rl - rh);
  }
  return {violations == 0, fmt("%d of 1000 pairs violate R(A) <= R(A'), min R(A')-R(A) %.3e, %.1f s",
                               violations, min_gap, clock.seconds())};
}

Outcome round_trip(State& st) {
  Clock clock;
  const DatasetOptions o;
  std::size_t checked = 0, bad = 0;
  double worst = 0.0;
  for (const auto& [id, s] : st.series()) {
    const auto r = ratio_targets(s);
    for (std::size_t n = kSmoothingWindow; n < s.size(); ++n) {
      if (!r[n] || *r[n] < o.clip_low || *r[n] > o.clip_high) continue;
      const double x = cases_from_ratio(*r[n], double(s.population), double(s.cumulative[n - 1]),
                                        s.smoothed[n - 1], double(s.new_cases[n - kSmoothingWindow]));
      const double truth = double(s.new_cases[n]);
      const double rel = std::abs(x - truth) / std::max(1.0, std::abs(truth));
      worst = std::max(worst, rel);
      if (rel > 1e-9) ++bad;
      ++checked;
    }
  }
  return {checked > 0 && bad == 0,
          fmt("%zu unclipped samples, max relative error %.2e (bound 1e-9), %.1f s", checked, worst,
              clock.seconds())};
}

Outcome synthetic(State&) {
  Clock clock;
  const std::uint64_t seed = 2024;
  const auto data = esp::testing::synthetic_dataset(5, 200, seed);
  TrainConfig cfg;
  cfg.seed = 1;
  const auto model = train(PredictorModel::initialized(1), data, cfg);
  const double lstm = mae(model, data.validation);
  const auto linear = LinearBaseline::fit(data.train);
  double lin = 0.0;
  for (const auto& s : data.validation) lin += std::abs(linear.predict(s.actions, s.ratios) - s.target);
  lin /= static_cast<double>(data.validation.size());
  const double t = clock.seconds();
  return {lstm < 0.05 && lstm < 0.5 * lin && t < 600.0,
          fmt("one-step MAE %.4f (bound 0.05), linear %.4f (need < half), %d epochs, "
              "%.1f s",
              lstm, lin, model.meta.epochs_run, t)};
}

Outcome comparison(State& st) {
  Clock clock;
  const auto& series = st.series();
  const auto eval = build_eval_set(series, countries_by_cases(series), 20, kTestDays);
  std::vector<MetricReport> reports;
  for (int t = 0; t < st.trials; ++t) {
    const auto seed = static_cast<std::uint64_t>(t);
    DatasetOptions o;
    o.seed = seed;
    const auto data = build_dataset(series, o);
    PredictorModel model;
    if (t == 0) {
      model = st.trained();
    } else {
      TrainConfig cfg;
      cfg.seed = seed;
      model = train(PredictorModel::initialized(seed), data, cfg);
    }
    NpiLstmPredictor lstm(model);
    const auto lin = fit_baseline(BaselineKind::kLinear, data.train, seed);
    const auto mlp = fit_baseline(BaselineKind::kMlp, data.train, seed);
    reports.push_back(
        compute_metrics({{"NPI-LSTM", &lstm}, {"Linear", lin.get()}, {"MLP", mlp.get()}}, eval));
  }
  const auto rows = summarize_trials(reports);
  std::map<std::string, MetricRow> m;
  for (const auto& r : rows) m[r.method] = r.mean;
  const auto& l = m["NPI-LSTM"];
  const auto& b = m["Linear"];
  const auto& p = m["MLP"];
  const bool norm = l.normalized_case_mae < b.normalized_case_mae;
  const bool rank = l.mean_rank < b.mean_rank;
  const bool worst = p.normalized_case_mae > l.normalized_case_mae &&
                     p.normalized_case_mae > b.normalized_case_mae;
  std::ostringstream table;
  write_summary_table(table, rows);
  std::cerr << table.str();
  return {norm && rank && worst,
          fmt("%d trials, %zu countries; normalized case MAE LSTM %.3f vs linear %.3f [%s], "
              "mean rank %.2f vs %.2f [%s], MLP %.3f worst [%s], %.0f s",
              st.trials, eval.size(), l.normalized_case_mae, b.normalized_case_mae,
              norm ? "ok" : "reversed", l.mean_rank, b.mean_rank, rank ? "ok" : "reversed",
              p.normalized_case_mae, worst ? "ok" : "no", clock.seconds())};
}

std::vector<std::set<std::size_t>> brute_fronts(const std::vector<Objectives>& p) {
  std::vector<std::set<std::size_t>> fronts;
  std::set<std::size_t> left;
  for (std::size_t i = 0; i < p.size(); ++i) left.insert(i);
  while (!left.empty()) {
    std::set<std::size_t> f;
    for (auto i : left) {
      bool dominated = false;
      for (auto j : left) dominated = dominated || dominates(p[j], p[i]);
      if (!dominated) f.insert(i);
    }
    for (auto i : f) left.erase(i);
    fronts.push_back(f);
  }
  return fronts;
}

Outcome nsga(State&) {
  Clock clock;
  std::mt19937_64 rng(586);
  std::uniform_int_distribution<int> grid(0, 9);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  int mismatches = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<Objectives> p(50);
    const bool ties = trial % 2 == 0;
    for (auto& o : p) o = ties ? Objectives{double(grid(rng)), double(grid(rng))} : Objectives{u(rng), u(rng)};
    const auto fast = nondominated_sort(p);
    const auto slow = brute_fronts(p);
    bool same = fast.size() == slow.size();
    for (std::size_t f = 0; same && f < fast.size(); ++f) {
      same = std::set<std::size_t>(fast[f].begin(), fast[f].end()) == slow[f];
    }
    if (!same) ++mismatches;
  }
  const std::vector<Objectives> fixture{{0, 2}, {1, 1}, {2, 0}};
  const std::vector<std::size_t> all{0, 1, 2};
  const auto d = crowding_distance(fixture, all);
  const bool crowd = std::isinf(d[0]) && d[1] == 2.0 && std::isinf(d[2]);
  return {mismatches == 0 && crowd,
          fmt("%d of 1000 populations differ from brute force; fixture crowding %.3f (expect 2), "
              "%.1f s",
              mismatches, d[1], clock.seconds())};
}

Outcome evolution(State& st) {
  Clock clock;
  StringencyStub stub;
  std::vector<ForecastContext> ctx;
  for (int i = 0; i < 2; ++i) {
    const auto s = esp::testing::outbreak_series(60, static_cast<std::uint64_t>(i), "C" + std::to_string(i));
    ctx.push_back(make_context(s, std::size_t{59}));
  }
  EvolutionConfig desk;
  desk.population = 20;
  desk.generations = 10;
  desk.horizon = 30;
  desk.n_countries = 2;
  desk.seed = 3;
  const auto res = evolve(desk, stub, ctx);
  const Objectives ref{1e7, 24.0};
  double prev = -1.0;
  int decreases = 0, dominated = 0;
  for (const auto& g : res.log) {
    std::vector<Objectives> front;
    for (auto i : g.front) front.push_back(g.objectives[i]);
    const double hv = hypervolume_2d(front, ref);
    if (hv < prev) ++decreases;
    prev = hv;
    for (const auto& a : front)
      for (const auto& b : front) dominated += dominates(a, b) ? 1 : 0;
  }
  const double desk_time = clock.seconds();

  Clock full_clock;
  EvolutionConfig full;
  full.validate();
  const int planned = full.generations;
  full.generations = 2;
  const auto contexts = evaluation_contexts(st.series(), full.n_countries);
  NpiLstmPredictor lstm(st.trained());
  const auto big = evolve(full, lstm, contexts);
  st.front = make_snapshot(full, big);
  const double full_time = full_clock.seconds();
  const bool smoke = big.log.size() == 3 && big.population.size() == 250 &&
                     contexts.size() == 20;

  return {decreases == 0 && dominated == 0 && desk_time < 120.0 && smoke,
          fmt("desk: %zu generations, %d hypervolume decreases, %d dominated front pairs, %.1f s; "
              "full-scale 250/%d/%d-day/%zu countries ran 2 generations, front %zu, %.0f s",
              res.log.size() - 1, decreases, dominated, desk_time, planned, full.horizon,
              contexts.size(), big.front.size(), full_time)};
}

double se(double v, double l, double d2) { return v * std::exp(-d2 / (2 * l * l)); }

Outcome gp(State& st) {
  Clock clock;
  // Closed form.
  double oracle = 0.0;
  const GpHyperparameters h{0.7, 1.3, 0.4, 0.5, 0.05};
  std::mt19937_64 rng(588);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int n = 2; n <= 10; ++n) {
    Eigen::MatrixXd x(4, n);
    Eigen::VectorXd r(n), e(n);
    for (int j = 0; j < n; ++j) {
      for (int i = 0; i < 4; ++i) x(i, j) = g(rng);
      r[j] = 1.0 + 0.2 * g(rng);
      e[j] = 0.1 * g(rng);
    }
    const GpModel model(x, r, e, h);
    Eigen::MatrixXd k(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        k(i, j) = se(h.input_variance, h.input_length, (x.col(i) - x.col(j)).squaredNorm()) +
                  se(h.output_variance, h.output_length, std::pow(r[i] - r[j], 2));
    const Eigen::MatrixXd inv = (k + h.noise_variance * Eigen::MatrixXd::Identity(n, n)).inverse();
    for (int q = 0; q < 5; ++q) {
      Eigen::VectorXd xq(4);
      for (int i = 0; i < 4; ++i) xq[i] = g(rng);
      const double rq = 1.0 + 0.2 * g(rng);
      Eigen::VectorXd ks(n);
      for (int i = 0; i < n; ++i)
        ks[i] = se(h.input_variance, h.input_length, (x.col(i) - xq).squaredNorm()) +
                se(h.output_variance, h.output_length, std::pow(r[i] - rq, 2));
      const double mean = rq + ks.dot(inv * e);
      const double var = h.input_variance + h.output_variance - ks.dot(inv * ks);
      const auto c = model.calibrate(xq, rq);
      oracle = std::max({oracle, std::abs(c.mean - mean), std::abs(c.variance - var)});
    }
  }

  // Coverage on a heteroscedastic synthetic problem.
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  auto make = [&](int n, Eigen::MatrixXd& x, Eigen::VectorXd& r, Eigen::VectorXd& y) {
    x.resize(4, n);
    r.resize(n);
    y.resize(n);
    for (int j = 0; j < n; ++j) {
      for (int i = 0; i < 4; ++i) x(i, j) = u(rng);
      r[j] = 1.0 + 0.3 * std::sin(x(0, j)) + 0.1 * x(2, j);
      const double sd = 0.03 + 0.03 * std::abs(x(3, j));
      y[j] = r[j] + 0.2 * std::cos(1.5 * x(1, j)) - 0.1 + sd * g(rng);
    }
  };
  Eigen::MatrixXd xt, xq;
  Eigen::VectorXd rt, yt, rq, yq;
  make(2000, xt, rt, yt);
  make(10000, xq, rq, yq);
  RioOptions ro;
  ro.seed = 3;
  const auto fitted = fit_rio(xt, rt, yt, ro);
  const auto c = fitted.calibrate_batch(xq, std::span<const double>(rq.data(), rq.size()));
  int covered = 0;
  for (int j = 0; j < 10000; ++j) {
    if (std::abs(yq[j] - c[j].mean) <= 1.96 * std::sqrt(c[j].predictive_variance)) ++covered;
  }
  const double coverage = covered / 1e4;

  // Held-out MAE on the snapshot.
  const auto& model = st.trained();
  const auto& series = st.series();
  const auto countries =
      select_rio_countries(countries_by_cases(series), per_country_mae(model, series));
  RioOptions so;
  const auto data = prepare_rio_data(model, series, countries, so);
  st.gp = fit_rio(data.train, so);
  double before = 0.0, after = 0.0;
  int held_cov = 0;
  for (const auto& s : data.heldout) {
    const auto k = st.gp->calibrate(s.feature, s.r_hat);
    before += std::abs(s.target - s.r_hat);
    after += std::abs(s.target - k.mean);
    if (std::abs(s.target - k.mean) <= 1.96 * std::sqrt(k.predictive_variance)) ++held_cov;
  }
  const double n = static_cast<double>(data.heldout.size());
  before /= n;
  after /= n;

  return {oracle < 1e-8 && std::abs(coverage - 0.95) <= 0.03 && after <= 1.05 * before,
          fmt("closed-form max diff %.1e (bound 1e-8); synthetic 95%% interval coverage %.4f on "
              "10000 points (95 +/- 3%%); snapshot held-out MAE %.4f -> %.4f (at most +5%%), "
              "coverage %.3f on %zu points; %.0f s",
              oracle, coverage, before, after, held_cov / n, data.heldout.size(), clock.seconds())};
}

Outcome mc(State&) {
  Clock clock;
  const auto s = esp::testing::outbreak_series(50, 4);
  const auto ctx = make_context(s, std::size_t{49});
  const auto req = hold_current_npis(ctx, 30);
  const auto band = mc_forecast(FixedDistribution(1.05, 0.0), req, 50, 3);
  const auto ref = rollout(ConstantPredictor(1.05), req);
  int differ = 0;
  for (std::size_t i = 0; i < ref.days.size(); ++i) {
    const auto& b = band.days[i];
    const double x = ref.days[i].new_cases;
    if (b.cases_q25 != x || b.cases_q50 != x || b.cases_q75 != x) ++differ;
  }
  const double sd = 0.1;
  const auto big = mc_forecast(FixedDistribution(1.0, sd * sd), hold_current_npis(ctx, 1), 10000, 1);
  const double z = 0.6744897501960817;
  const double e25 = std::abs(big.days[0].r_q25 - (1.0 - z * sd));
  const double e50 = std::abs(big.days[0].r_q50 - 1.0);
  const double e75 = std::abs(big.days[0].r_q75 - (1.0 + z * sd));
  const double worst = std::max({e25, e50, e75});
  return {differ == 0 && worst <= 0.01,
          fmt("zero variance: %d of 30 days differ from the deterministic rollout; N(1, 0.1^2) "
              "quartiles over 10000 draws off by at most %.4f (bound 0.01), %.1f s",
              differ, worst, clock.seconds())};
}

Outcome service(State& st) {
  Clock clock;
  if (!st.front) evolution(st);
  PublishedArtifacts art;
  art.dataset = st.series();
  art.predictor = st.trained();
  art.gp = st.gp;
  art.front = *st.front;
  art.manifest = {"dataset", "predictor", st.gp ? "gp" : "", "front"};
  art.manifest_fingerprint = "acceptance";
  ServiceConfig cfg;
  cfg.port = 0;
  cfg.rollouts = 100;
  Service svc(std::move(art), cfg);
  const int port = svc.bind();
  std::thread server([&] { svc.listen(); });
  httplib::Client cli("127.0.0.1", port);
  cli.set_read_timeout(120);

  std::vector<std::string> problems;
  auto res = cli.Get("/prescriptors");
  std::size_t n = 0;
  int dominated = 0;
  if (!res || res->status != 200) {
    problems.push_back("GET /prescriptors failed");
  } else {
    const auto list = Json::parse(res->body)["prescriptors"];
    n = list.size();
    for (const auto& a : list)
      for (const auto& b : list)
        dominated += dominates({b["mean_cases"], b["mean_stringency"]},
                               {a["mean_cases"], a["mean_stringency"]});
  }
  const auto country = countries_by_cases(st.series()).front();
  res = cli.Get("/forecast?country=" + httplib::detail::encode_query_param(country) +
                "&prescriptor=4&horizon=60&seed=7");
  const std::string direct = res && res->status == 200 ? res->body : "";
  const Json pad{{"country", country}, {"prescriptor", 4}, {"horizon", 60}, {"seed", 7},
                 {"edits", Json::array()}};
  res = cli.Post("/scratchpad", pad.dump(), "application/json");
  const bool identical = res && res->status == 200 && !direct.empty() && res->body == direct;
  auto bad = pad;
  bad["edits"] = Json::array({Json{{"day", 5}, {"npi", 1}, {"level", 7}}});
  res = cli.Post("/scratchpad", bad.dump(), "application/json");
  const int bad_status = res ? res->status : -1;
  svc.stop();
  server.join();

  return {n == 20 && dominated == 0 && identical && bad_status == 422,
          fmt("over HTTP on port %d: %zu prescriptors, %d dominated pairs; identity scratchpad "
              "%s the forecast body (%zu bytes); out-of-bounds edit -> %d; %.1f s",
              port, n, dominated, identical ? "equals" : "differs from", direct.size(), bad_status,
              clock.seconds())};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  State st;
  st.data_dir = ESP_DATA_DIR;
  std::vector<std::string> only, expect_fail;
  std::string report_path;
  app.add_option("--only", only, "Run only these criteria");
  app.add_option("--expect-fail", expect_fail, "Criteria known not to hold");
  app.add_option("--trials", st.trials, "Trials for the predictor comparison");
  app.add_option("--data-dir", st.data_dir, "Directory with the snapshot CSVs");
  app.add_option("--report", report_path, "Also write the PASS/FAIL lines here");
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<std::string, std::function<Outcome(State&)>>> criteria{
      {"gradient", gradient},     {"monotonicity", monotonicity}, {"round-trip", round_trip},
      {"synthetic", synthetic},   {"comparison", comparison},     {"nsga", nsga},
      {"evolution", evolution},   {"gp", gp},                     {"mc", mc},
      {"service", service}};

  const std::set<std::string> expected(expect_fail.begin(), expect_fail.end());
  std::ofstream report;
  if (!report_path.empty()) report.open(report_path);
  int unexpected = 0;
  for (const auto& [name, run] : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), name) == only.end()) continue;
    Outcome o;
    try {
      o = run(st);
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const bool known = expected.count(name) > 0;
    const std::string line = std::string(o.pass ? "PASS " : "FAIL ") + name + ": " + o.detail +
                             (!o.pass && known ? " (known failure)" : "");
    std::cout << line << std::endl;
    if (report) report << line << std::endl;
    if (!o.pass && !known) ++unexpected;
  }
  return unexpected == 0 ? 0 : 1;
}
