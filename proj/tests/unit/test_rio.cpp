#include <cmath>
#include <random>

#include "doctest.h"
#include "esp/rio.hpp"
#include "helpers.hpp"

using namespace esp;

namespace {

struct Problem {
  Eigen::MatrixXd x;
  Eigen::VectorXd r, e;
};

Problem random_problem(int n, int d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  Problem p{Eigen::MatrixXd(d, n), Eigen::VectorXd(n), Eigen::VectorXd(n)};
  for (int j = 0; j < n; ++j) {
    for (int i = 0; i < d; ++i) p.x(i, j) = g(rng);
    p.r[j] = 1.0 + 0.2 * g(rng);
    p.e[j] = 0.1 * g(rng);
  }
  return p;
}

double se(double v, double l, double d2) { return v * std::exp(-d2 / (2 * l * l)); }

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

}  // namespace

TEST_CASE("GP posterior matches the textbook closed form") {
  const GpHyperparameters h{0.7, 1.3, 0.4, 0.5, 0.05};
  for (int n : {3, 7, 10}) {
    auto p = random_problem(n, 4, static_cast<std::uint64_t>(n));
    GpModel gp(p.x, p.r, p.e, h);
    Eigen::MatrixXd k(n, n);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        k(i, j) = se(h.input_variance, h.input_length, (p.x.col(i) - p.x.col(j)).squaredNorm()) +
                  se(h.output_variance, h.output_length, std::pow(p.r[i] - p.r[j], 2));
      }
    }
    const Eigen::MatrixXd inv = (k + h.noise_variance * Eigen::MatrixXd::Identity(n, n)).inverse();
    auto q = random_problem(5, 4, 99);
    for (int j = 0; j < 5; ++j) {
      Eigen::VectorXd ks(n);
      for (int i = 0; i < n; ++i) {
        ks[i] = se(h.input_variance, h.input_length, (p.x.col(i) - q.x.col(j)).squaredNorm()) +
                se(h.output_variance, h.output_length, std::pow(p.r[i] - q.r[j], 2));
      }
      const double mean = q.r[j] + ks.dot(inv * p.e);
      const double var = h.input_variance + h.output_variance - ks.dot(inv * ks);
      const auto c = gp.calibrate(q.x.col(j), q.r[j]);
      CHECK(std::abs(c.mean - mean) < 1e-8);
      CHECK(std::abs(c.variance - var) < 1e-8);
      CHECK(c.predictive_variance == doctest::Approx(c.variance + h.noise_variance));
    }
  }
}

TEST_CASE("GP: interpolation and prior reversion limits") {
  auto p = random_problem(8, 3, 4);
  GpModel gp(p.x, p.r, p.e, {1.0, 1.0, 0.5, 0.3, 1e-9});
  for (int j = 0; j < 8; ++j) {
    const auto c = gp.calibrate(p.x.col(j), p.r[j]);
    CHECK(c.mean == doctest::Approx(p.r[j] + p.e[j]).epsilon(1e-5));
    CHECK(c.variance < 1e-6);
  }
  Eigen::VectorXd far = Eigen::VectorXd::Constant(3, 100.0);
  const auto c = gp.calibrate(far, 50.0);
  CHECK(c.mean == doctest::Approx(50.0).epsilon(1e-12));
  CHECK(c.variance == doctest::Approx(1.5));
  CHECK_THROWS_AS(gp.calibrate(Eigen::VectorXd::Zero(4), 1.0), ShapeError);
}

TEST_CASE("log marginal likelihood: value and analytic gradient") {
  auto p = random_problem(12, 3, 7);
  const GpHyperparameters h{0.3, 1.1, 0.2, 0.4, 0.02};
  Eigen::Matrix<double, 5, 1> g;
  const double v = log_marginal_likelihood(p.x, p.r, p.e, h, &g);
  GpModel gp(p.x, p.r, p.e, h);
  CHECK(v == doctest::Approx(gp.log_marginal_likelihood()).epsilon(1e-10));
  const double eps = 1e-6;
  for (int i = 0; i < 5; ++i) {
    GpHyperparameters up = h, dn = h;
    double* u[5] = {&up.input_variance, &up.input_length, &up.output_variance, &up.output_length,
                    &up.noise_variance};
    double* d[5] = {&dn.input_variance, &dn.input_length, &dn.output_variance, &dn.output_length,
                    &dn.noise_variance};
    *u[i] *= std::exp(eps);
    *d[i] *= std::exp(-eps);
    const double fd = (log_marginal_likelihood(p.x, p.r, p.e, up) -
                       log_marginal_likelihood(p.x, p.r, p.e, dn)) / (2 * eps);
    CHECK(g[i] == doctest::Approx(fd).epsilon(1e-5));
  }
}

TEST_CASE("fit_rio: optimiser never ends below its starting points") {
  auto p = random_problem(80, 4, 3);
  for (int j = 0; j < 80; ++j) p.e[j] += 0.3 * std::sin(2 * p.x(0, j));
  RioOptions o;
  o.seed = 5;
  RioFitReport rep;
  auto gp = fit_rio(p.x, p.r, (p.r + p.e).eval(), o, &rep);
  REQUIRE(rep.start_lml.size() == 8);
  for (std::size_t s = 0; s < rep.start_lml.size(); ++s) {
    CHECK(rep.final_lml[s] >= rep.start_lml[s]);
    CHECK(rep.best_lml >= rep.start_lml[s]);
  }
  CHECK(gp.hyper().valid());
  CHECK(gp.size() == 80);
}

TEST_CASE("fit_rio: zero residuals give no correction") {
  auto p = random_problem(60, 4, 11);
  auto gp = fit_rio(p.x, p.r, p.r, RioOptions{});
  auto q = random_problem(20, 4, 12);
  for (int j = 0; j < 20; ++j) {
    CHECK(std::abs(gp.calibrate(q.x.col(j), q.r[j]).mean - q.r[j]) < 1e-3);
  }
}

TEST_CASE("fit_rio: preconditions and subsampling") {
  auto p = random_problem(29, 2, 1);
  CHECK_THROWS_AS(fit_rio(p.x, p.r, p.r, RioOptions{}), DataError);
  auto big = random_problem(120, 2, 2);
  RioOptions o;
  o.max_train = 50;
  o.max_hyperopt = 30;
  auto gp = fit_rio(big.x, big.r, (big.r + big.e).eval(), o);
  CHECK(gp.size() == 50);
  CHECK(gp.subsample.size() == 50);
  CHECK(std::is_sorted(gp.subsample.begin(), gp.subsample.end()));
}

TEST_CASE("select_rio_countries") {
  std::vector<std::string> by_cases;
  std::map<std::string, double> mae;
  for (int i = 0; i < 35; ++i) {
    by_cases.push_back("C" + std::to_string(i));
    mae[by_cases.back()] = 0.01;
  }
  CHECK(select_rio_countries(by_cases, mae).size() == 30);
  for (auto& [k, v] : mae) v = 0.1;
  std::vector<std::string> warnings;
  auto all = select_rio_countries(by_cases, mae, 0.04, 30, &warnings);
  CHECK(all.size() == 30);
  CHECK(warnings.size() == 1);
  mae["C3"] = 0.02;
  mae["C31"] = 0.02;  // outside the top 30
  auto one = select_rio_countries(by_cases, mae);
  REQUIRE(one.size() == 1);
  CHECK(one[0] == "C3");
}

TEST_CASE("prepare_rio_data: filtering and per-country hold-out") {
  SeriesMap m;
  m["A"] = esp::testing::outbreak_series(80, 1, "A");
  m["B"] = esp::testing::outbreak_series(70, 2, "B");
  auto model = PredictorModel::initialized(3);
  RioOptions o;
  auto d = prepare_rio_data(model, m, {"A", "B"}, o);
  const auto total = country_samples(m["A"]).size() + country_samples(m["B"]).size();
  CHECK(d.heldout.size() == 28);
  CHECK(d.train.size() + d.heldout.size() <= total - 20);
  for (const auto& s : d.train) {
    CHECK(s.feature.size() == 64);
    CHECK(s.target <= 2.0);
  }
  CHECK_THROWS_AS(prepare_rio_data(model, m, {"Z"}, o), NotFoundError);
}

TEST_CASE("empirical_quantile: linear interpolation") {
  CHECK(empirical_quantile({4, 1, 3, 2}, 0.25) == doctest::Approx(1.75));
  CHECK(empirical_quantile({4, 1, 3, 2}, 0.5) == doctest::Approx(2.5));
  CHECK(empirical_quantile({7}, 0.75) == 7);
}

TEST_CASE("mc_forecast: zero variance collapses onto the deterministic rollout") {
  auto s = esp::testing::outbreak_series(50, 4);
  auto req = hold_current_npis(make_context(s, std::size_t{49}), 20);
  FixedDistribution dist(1.05, 0.0);
  ConstantPredictor det(1.05);
  auto band = mc_forecast(dist, req, 16, 3);
  auto ref = rollout(det, req);
  REQUIRE(band.days.size() == 20);
  for (std::size_t i = 0; i < 20; ++i) {
    CHECK(band.days[i].cases_q25 == ref.days[i].new_cases);
    CHECK(band.days[i].cases_q75 == ref.days[i].new_cases);
  }
}

TEST_CASE("mc_forecast: ordering, determinism, quartiles of a fixed normal") {
  auto s = esp::testing::outbreak_series(50, 4);
  auto req = hold_current_npis(make_context(s, std::size_t{49}), 10);
  FixedDistribution dist(1.0, 0.01);
  auto a = mc_forecast(dist, req, 100, 8);
  auto b = mc_forecast(dist, req, 100, 8);
  for (std::size_t i = 0; i < a.days.size(); ++i) {
    CHECK(a.days[i].cases_q25 <= a.days[i].cases_q75);
    CHECK(a.days[i].r_q25 <= a.days[i].r_q75);
    CHECK(a.days[i].cases_q50 == b.days[i].cases_q50);
  }
  auto one = hold_current_npis(req.context, 1);
  auto big = mc_forecast(dist, one, 10000, 1);
  CHECK(std::abs(big.days[0].r_q25 - (1.0 - 0.6745 * 0.1)) < 0.01);
  CHECK(std::abs(big.days[0].r_q75 - (1.0 + 0.6745 * 0.1)) < 0.01);
  CHECK_THROWS_AS(mc_forecast(dist, req, 3, 0), ConfigError);
}
