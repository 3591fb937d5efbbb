#include "esp/rio.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numbers>
#include <numeric>
#include <ostream>

#include "esp/error.hpp"

namespace esp {

namespace {

using Vec5 = Eigen::Matrix<double, 5, 1>;

constexpr double kInitialJitter = 1e-10;
constexpr double kMaxJitter = 1e-2;

Vec5 to_log(const GpHyperparameters& h) {
  Vec5 v;
  v << std::log(h.input_variance), std::log(h.input_length), std::log(h.output_variance),
      std::log(h.output_length), std::log(h.noise_variance);
  return v;
}

GpHyperparameters from_log(const Vec5& v) {
  return {std::exp(v[0]), std::exp(v[1]), std::exp(v[2]), std::exp(v[3]), std::exp(v[4])};
}

// Box in log space keeping the optimiser away from degenerate kernels.
Vec5 clamp_log(Vec5 v) {
  const double lo[5] = {std::log(1e-8), std::log(1e-3), std::log(1e-8), std::log(1e-3),
                        std::log(1e-8)};
  const double hi[5] = {std::log(1e2), std::log(1e3), std::log(1e2), std::log(1e3),
                        std::log(1e1)};
  for (int i = 0; i < 5; ++i) v[i] = std::clamp(v[i], lo[i], hi[i]);
  return v;
}

Eigen::MatrixXd squared_distances(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  const Eigen::VectorXd na = a.colwise().squaredNorm().transpose();
  const Eigen::RowVectorXd nb = b.colwise().squaredNorm();
  Eigen::MatrixXd d = -2.0 * a.transpose() * b;
  d.colwise() += na;
  d.rowwise() += nb;
  return d.cwiseMax(0.0);
}

Eigen::MatrixXd scalar_distances(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  Eigen::MatrixXd d(a.size(), b.size());
  for (Eigen::Index j = 0; j < b.size(); ++j) d.col(j) = (a.array() - b[j]).square().matrix();
  return d;
}

struct Factor {
  Eigen::MatrixXd lower;
  double jitter = 0.0;
  bool ok = false;
};

Factor factorize(const Eigen::MatrixXd& k, bool escalate) {
  Factor f;
  double jitter = 0.0;
  for (;;) {
    Eigen::MatrixXd m = k;
    m.diagonal().array() += jitter;
    Eigen::LLT<Eigen::MatrixXd> llt(m);
    if (llt.info() == Eigen::Success) {
      f.lower = llt.matrixL();
      f.jitter = jitter;
      f.ok = true;
      return f;
    }
    if (!escalate) return f;
    jitter = jitter == 0.0 ? kInitialJitter : jitter * 10.0;
    if (jitter > kMaxJitter * (1 + 1e-9)) return f;
  }
}

struct KernelInputs {
  Eigen::MatrixXd d_in;
  Eigen::MatrixXd d_out;
};

Eigen::MatrixXd kernel_matrix(const KernelInputs& d, const GpHyperparameters& h,
                              Eigen::MatrixXd* k_in = nullptr, Eigen::MatrixXd* k_out = nullptr) {
  Eigen::MatrixXd a =
      h.input_variance * (-d.d_in.array() / (2.0 * h.input_length * h.input_length)).exp();
  Eigen::MatrixXd b =
      h.output_variance * (-d.d_out.array() / (2.0 * h.output_length * h.output_length)).exp();
  Eigen::MatrixXd k = a + b;
  if (k_in) *k_in = std::move(a);
  if (k_out) *k_out = std::move(b);
  return k;
}

double lml_from_inputs(const KernelInputs& d, const Eigen::VectorXd& e,
                       const GpHyperparameters& h, Vec5* grad) {
  const auto n = e.size();
  Eigen::MatrixXd k_in, k_out;
  Eigen::MatrixXd k = kernel_matrix(d, h, grad ? &k_in : nullptr, grad ? &k_out : nullptr);
  k.diagonal().array() += h.noise_variance;
  Eigen::LLT<Eigen::MatrixXd> llt(k);
  if (llt.info() != Eigen::Success) return -std::numeric_limits<double>::infinity();
  const Eigen::VectorXd alpha = llt.solve(e);
  const Eigen::MatrixXd l = llt.matrixL();
  const double log_det = 2.0 * l.diagonal().array().log().sum();
  const double lml = -0.5 * e.dot(alpha) - 0.5 * log_det -
                     0.5 * static_cast<double>(n) * std::log(2.0 * std::numbers::pi);
  if (grad) {
    Eigen::MatrixXd w = alpha * alpha.transpose() - llt.solve(Eigen::MatrixXd::Identity(n, n));
    const double li2 = h.input_length * h.input_length;
    const double lo2 = h.output_length * h.output_length;
    (*grad)[0] = 0.5 * (w.array() * k_in.array()).sum();
    (*grad)[1] = 0.5 * (w.array() * k_in.array() * d.d_in.array()).sum() / li2;
    (*grad)[2] = 0.5 * (w.array() * k_out.array()).sum();
    (*grad)[3] = 0.5 * (w.array() * k_out.array() * d.d_out.array()).sum() / lo2;
    (*grad)[4] = 0.5 * h.noise_variance * w.trace();
  }
  return std::isfinite(lml) ? lml : -std::numeric_limits<double>::infinity();
}

KernelInputs make_inputs(const Eigen::MatrixXd& x, const Eigen::VectorXd& r) {
  return {squared_distances(x, x), scalar_distances(r, r)};
}

// Gradient ascent in log space with an adaptive step; only improving steps
// are accepted.
std::pair<Vec5, double> ascend(const KernelInputs& d, const Eigen::VectorXd& e, Vec5 theta,
                               int max_iterations) {
  Vec5 grad;
  double lml = lml_from_inputs(d, e, from_log(theta), &grad);
  double step = 0.1;
  for (int it = 0; it < max_iterations && std::isfinite(lml); ++it) {
    const double gnorm = grad.norm();
    if (gnorm < 1e-8) break;
    bool accepted = false;
    while (step > 1e-10) {
      const Vec5 trial = clamp_log(theta + step * grad / gnorm);
      Vec5 trial_grad;
      const double v = lml_from_inputs(d, e, from_log(trial), &trial_grad);
      if (std::isfinite(v) && v > lml) {
        const double gain = v - lml;
        theta = trial;
        lml = v;
        grad = trial_grad;
        step = std::min(step * 2.0, 2.0);
        accepted = true;
        if (gain < 1e-9 * (1.0 + std::abs(lml))) it = max_iterations;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;
  }
  return {theta, lml};
}

double median_of(std::vector<double> v) {
  if (v.empty()) return 1.0;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2), v.end());
  return v[v.size() / 2];
}

}  // namespace

bool GpHyperparameters::valid() const {
  for (double v : {input_variance, input_length, output_variance, output_length, noise_variance}) {
    if (!(v > 0.0) || !std::isfinite(v)) return false;
  }
  return true;
}

GpModel::GpModel(Eigen::MatrixXd features, Eigen::VectorXd r_hat, Eigen::VectorXd residuals,
                 GpHyperparameters hyper)
    : hyper_(hyper),
      features_(std::move(features)),
      r_hat_(std::move(r_hat)),
      residuals_(std::move(residuals)) {
  if (!hyper_.valid()) throw ConfigError("GP hyperparameters must be positive and finite");
  if (features_.cols() != r_hat_.size() || r_hat_.size() != residuals_.size()) {
    throw ShapeError("GP training arrays disagree in length");
  }
  if (residuals_.size() == 0) throw DataError("GP needs at least one training point");
  const KernelInputs d = make_inputs(features_, r_hat_);
  Eigen::MatrixXd k = kernel_matrix(d, hyper_);
  k.diagonal().array() += hyper_.noise_variance;
  auto f = factorize(k, true);
  if (!f.ok) throw NumericalError("Cholesky failed with jitter up to 1e-2");
  chol_ = std::move(f.lower);
  jitter_ = f.jitter;
  alpha_ = chol_.triangularView<Eigen::Lower>().solve(residuals_);
  chol_.triangularView<Eigen::Lower>().transpose().solveInPlace(alpha_);
  lml_ = -0.5 * residuals_.dot(alpha_) - chol_.diagonal().array().log().sum() -
         0.5 * static_cast<double>(residuals_.size()) * std::log(2.0 * std::numbers::pi);
}

double GpModel::kernel(const Eigen::VectorXd& a, double ra, const Eigen::VectorXd& b,
                       double rb) const {
  const double di = (a - b).squaredNorm();
  const double dr = (ra - rb) * (ra - rb);
  return hyper_.input_variance *
             std::exp(-di / (2.0 * hyper_.input_length * hyper_.input_length)) +
         hyper_.output_variance *
             std::exp(-dr / (2.0 * hyper_.output_length * hyper_.output_length));
}

std::vector<CalibratedPrediction> GpModel::calibrate_batch(const Eigen::MatrixXd& q,
                                                           std::span<const double> r) const {
  if (q.rows() != features_.rows()) {
    throw ShapeError("feature dimension " + std::to_string(q.rows()) + " does not match GP (" +
                     std::to_string(features_.rows()) + ")");
  }
  if (static_cast<std::size_t>(q.cols()) != r.size()) throw ShapeError("query length mismatch");
  Eigen::VectorXd rq = Eigen::Map<const Eigen::VectorXd>(r.data(), static_cast<Eigen::Index>(r.size()));
  const KernelInputs d{squared_distances(features_, q), scalar_distances(r_hat_, rq)};
  const Eigen::MatrixXd ks = kernel_matrix(d, hyper_);  // n x m
  const Eigen::MatrixXd v = chol_.triangularView<Eigen::Lower>().solve(ks);
  const Eigen::VectorXd correction = ks.transpose() * alpha_;
  const double prior = hyper_.input_variance + hyper_.output_variance;
  std::vector<CalibratedPrediction> out(r.size());
  for (std::size_t j = 0; j < r.size(); ++j) {
    const auto jj = static_cast<Eigen::Index>(j);
    out[j].mean = r[j] + correction[jj];
    out[j].variance = std::max(0.0, prior - v.col(jj).squaredNorm());
    out[j].predictive_variance = out[j].variance + hyper_.noise_variance;
  }
  return out;
}

CalibratedPrediction GpModel::calibrate(const Eigen::VectorXd& feature, double r_hat) const {
  return calibrate_batch(feature, std::span<const double>(&r_hat, 1)).front();
}

double log_marginal_likelihood(const Eigen::MatrixXd& features, const Eigen::VectorXd& r_hat,
                               const Eigen::VectorXd& residuals, const GpHyperparameters& hyper,
                               Eigen::Matrix<double, 5, 1>* grad) {
  return lml_from_inputs(make_inputs(features, r_hat), residuals, hyper, grad);
}

std::map<std::string, double> per_country_mae(const PredictorModel& model,
                                              const SeriesMap& series) {
  std::map<std::string, double> out;
  for (const auto& [id, s] : series) {
    const auto samples = country_samples(s);
    if (samples.empty()) continue;
    out[id] = mae(model, samples, true);
  }
  return out;
}

std::vector<std::string> select_rio_countries(const std::vector<std::string>& by_cases,
                                              const std::map<std::string, double>& mae,
                                              double threshold, int top_n,
                                              std::vector<std::string>* warnings) {
  const auto n = std::min<std::size_t>(by_cases.size(), static_cast<std::size_t>(std::max(top_n, 0)));
  std::vector<std::string> top(by_cases.begin(), by_cases.begin() + static_cast<std::ptrdiff_t>(n));
  std::vector<std::string> kept;
  for (const auto& c : top) {
    auto it = mae.find(c);
    if (it != mae.end() && it->second < threshold) kept.push_back(c);
  }
  if (kept.empty()) {
    if (warnings) {
      warnings->push_back("no country has MAE below " + std::to_string(threshold) +
                          "; using all " + std::to_string(top.size()));
    }
    return top;
  }
  return kept;
}

RioData prepare_rio_data(const PredictorModel& model, const SeriesMap& series,
                         const std::vector<std::string>& countries, const RioOptions& opts) {
  RioData data;
  std::mt19937_64 rng(opts.seed);
  for (const auto& c : countries) {
    auto it = series.find(c);
    if (it == series.end()) throw NotFoundError("unknown country " + c, c);
    auto samples = country_samples(it->second);
    const auto skip = std::min<std::size_t>(samples.size(), static_cast<std::size_t>(opts.drop_first));
    samples.erase(samples.begin(), samples.begin() + static_cast<std::ptrdiff_t>(skip));
    std::erase_if(samples, [&](const TrainingSample& s) { return s.raw_target > opts.outlier_ratio; });
    if (samples.empty()) continue;

    std::vector<PredictorInput> inputs;
    for (const auto& s : samples) inputs.push_back({s.actions, s.ratios});
    const auto out = forward_batch(model, inputs);

    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<bool> held(samples.size(), false);
    const auto n_test = std::min<std::size_t>(static_cast<std::size_t>(opts.test_days), samples.size());
    for (std::size_t i = 0; i < n_test; ++i) held[order[i]] = true;

    for (std::size_t i = 0; i < samples.size(); ++i) {
      const auto col = static_cast<Eigen::Index>(i);
      RioSample r;
      r.feature.resize(out.hidden_action.rows() + out.hidden_context.rows());
      r.feature << out.hidden_action.col(col), out.hidden_context.col(col);
      r.r_hat = out.r_hat[col];
      r.target = samples[i].raw_target;
      r.country = c;
      r.date = samples[i].date;
      (held[i] ? data.heldout : data.train).push_back(std::move(r));
    }
  }
  return data;
}

GpModel fit_rio(std::span<const RioSample> train, const RioOptions& opts, RioFitReport* report) {
  if (train.empty()) throw DataError("RIO needs at least 30 samples, got 0");
  const auto d = train.front().feature.size();
  Eigen::MatrixXd x(d, static_cast<Eigen::Index>(train.size()));
  Eigen::VectorXd r(static_cast<Eigen::Index>(train.size()));
  Eigen::VectorXd y(static_cast<Eigen::Index>(train.size()));
  for (std::size_t i = 0; i < train.size(); ++i) {
    if (train[i].feature.size() != d) throw ShapeError("RIO features differ in dimension");
    const auto ii = static_cast<Eigen::Index>(i);
    x.col(ii) = train[i].feature;
    r[ii] = train[i].r_hat;
    y[ii] = train[i].target;
  }
  return fit_rio(x, r, y, opts, report);
}

GpModel fit_rio(const Eigen::MatrixXd& features, const Eigen::VectorXd& r_hat,
                const Eigen::VectorXd& targets, const RioOptions& opts, RioFitReport* report) {
  const auto n = static_cast<std::size_t>(targets.size());
  if (features.cols() != targets.size() || r_hat.size() != targets.size()) {
    throw ShapeError("RIO training arrays disagree in length");
  }
  if (n < 30) throw DataError("RIO needs at least 30 samples, got " + std::to_string(n));
  if (opts.restarts < 1 || opts.max_iterations < 0) throw ConfigError("bad RIO optimiser settings");

  std::mt19937_64 rng(opts.seed);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::size_t> keep(order.begin(),
                                order.begin() + static_cast<std::ptrdiff_t>(std::min(n, opts.max_train)));
  std::sort(keep.begin(), keep.end());

  auto gather = [&](const std::vector<std::size_t>& idx, Eigen::MatrixXd& x, Eigen::VectorXd& r,
                    Eigen::VectorXd& e) {
    x.resize(features.rows(), static_cast<Eigen::Index>(idx.size()));
    r.resize(static_cast<Eigen::Index>(idx.size()));
    e.resize(static_cast<Eigen::Index>(idx.size()));
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const auto src = static_cast<Eigen::Index>(idx[i]);
      const auto dst = static_cast<Eigen::Index>(i);
      x.col(dst) = features.col(src);
      r[dst] = r_hat[src];
      e[dst] = targets[src] - r_hat[src];
    }
  };

  // Hyperparameters are searched on a smaller random subset of the kept samples.
  std::vector<std::size_t> opt_idx(order.begin(),
                                   order.begin() + static_cast<std::ptrdiff_t>(
                                                       std::min({n, opts.max_train, opts.max_hyperopt})));
  Eigen::MatrixXd xo;
  Eigen::VectorXd ro, eo;
  gather(opt_idx, xo, ro, eo);
  const KernelInputs dk = make_inputs(xo, ro);

  const double var_e = std::max(1e-6, (eo.array() - eo.mean()).square().mean());
  std::vector<double> din, dout;
  for (Eigen::Index j = 0; j < dk.d_in.cols(); ++j) {
    for (Eigen::Index i = 0; i < j; ++i) {
      din.push_back(dk.d_in(i, j));
      dout.push_back(dk.d_out(i, j));
    }
  }
  GpHyperparameters base{var_e / 2, std::sqrt(std::max(median_of(din), 1e-6)), var_e / 2,
                         std::sqrt(std::max(median_of(dout), 1e-6)), var_e / 2};
  const Vec5 theta0 = clamp_log(to_log(base));

  RioFitReport rep;
  std::normal_distribution<double> jitter(0.0, 1.0);
  Vec5 best_theta = theta0;
  double best = -std::numeric_limits<double>::infinity();
  for (int s = 0; s < opts.restarts; ++s) {
    Vec5 start = theta0;
    if (s > 0) {
      for (int i = 0; i < 5; ++i) start[i] += jitter(rng);
      start = clamp_log(start);
    }
    const double v0 = lml_from_inputs(dk, eo, from_log(start), nullptr);
    rep.start_lml.push_back(v0);
    if (!std::isfinite(v0)) {
      rep.final_lml.push_back(v0);
      continue;
    }
    auto [theta, v] = ascend(dk, eo, start, opts.max_iterations);
    rep.final_lml.push_back(v);
    if (v > best) {
      best = v;
      best_theta = theta;
    }
  }
  if (!std::isfinite(best)) throw NumericalError("log marginal likelihood non-finite at every start");
  rep.best_lml = best;
  if (report) *report = rep;

  Eigen::MatrixXd x;
  Eigen::VectorXd r, e;
  gather(keep, x, r, e);
  GpModel gp(std::move(x), std::move(r), std::move(e), from_log(best_theta));
  gp.subsample = std::move(keep);
  return gp;
}

void RioDistribution::distribution_batch(std::span<const PredictorInput> inputs,
                                         std::span<double> mean, std::span<double> variance) const {
  const auto out = forward_batch(*model_, inputs);
  Eigen::MatrixXd feats(out.hidden_action.rows() + out.hidden_context.rows(), out.r_hat.size());
  feats << out.hidden_action, out.hidden_context;
  const auto cal = gp_->calibrate_batch(
      feats, std::span<const double>(out.r_hat.data(), static_cast<std::size_t>(out.r_hat.size())));
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    mean[i] = cal[i].mean;
    variance[i] = cal[i].predictive_variance;
  }
}

double empirical_quantile(std::vector<double> v, double q) {
  if (v.empty()) throw DataError("quantile of an empty sample");
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1.0) * std::clamp(q, 0.0, 1.0);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

namespace {

// Row i of every batch belongs to rollout i; all rollouts share one horizon.
class SamplingPredictor final : public RatioPredictor {
 public:
  SamplingPredictor(const RatioDistribution& dist, int n, std::uint64_t seed) : dist_(&dist) {
    for (int i = 0; i < n; ++i) rngs_.emplace_back(seed + static_cast<std::uint64_t>(i));
  }
  double predict(std::span<const NpiVector>, std::span<const double>) const override {
    throw Error("sampling predictor is batch-only");
  }
  void predict_batch(std::span<const PredictorInput> inputs, std::span<double> out) const override {
    std::vector<double> mean(inputs.size()), var(inputs.size());
    dist_->distribution_batch(inputs, mean, var);
    std::normal_distribution<double> n(0.0, 1.0);
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      out[i] = std::max(0.0, mean[i] + std::sqrt(std::max(0.0, var[i])) * n(rngs_[i]));
    }
  }
  std::string name() const override { return "rio-sampler"; }

 private:
  const RatioDistribution* dist_;
  mutable std::vector<std::mt19937_64> rngs_;
};

}  // namespace

ForecastBand mc_forecast(const RatioDistribution& dist, const ForecastRequest& request,
                         int n_rollouts, std::uint64_t seed) {
  if (n_rollouts < 4) throw ConfigError("need at least 4 rollouts for quartiles");
  SamplingPredictor sampler(dist, n_rollouts, seed);
  std::vector<ForecastRequest> reqs(static_cast<std::size_t>(n_rollouts), request);
  const auto runs = rollout_batch(sampler, reqs);

  ForecastBand band;
  band.country = request.context.country;
  band.start_date = request.context.last_date;
  band.n_rollouts = n_rollouts;
  band.seed = seed;
  const auto horizon = runs.front().days.size();
  std::vector<double> r(runs.size()), x(runs.size());
  for (std::size_t d = 0; d < horizon; ++d) {
    for (std::size_t i = 0; i < runs.size(); ++i) {
      r[i] = runs[i].days[d].r_hat;
      x[i] = runs[i].days[d].new_cases;
    }
    BandDay day;
    day.date = runs.front().days[d].date;
    day.r_q25 = empirical_quantile(r, 0.25);
    day.r_q50 = empirical_quantile(r, 0.50);
    day.r_q75 = empirical_quantile(r, 0.75);
    day.cases_q25 = empirical_quantile(x, 0.25);
    day.cases_q50 = empirical_quantile(x, 0.50);
    day.cases_q75 = empirical_quantile(x, 0.75);
    band.days.push_back(day);
  }
  return band;
}

void write_band_csv(std::ostream& os, const ForecastResult& result, const ForecastBand& band) {
  if (result.days.size() != band.days.size()) throw ShapeError("forecast and band differ in length");
  os << "date,r_hat,new_cases,cumulative,active,q25,q75\n" << std::setprecision(10);
  for (std::size_t i = 0; i < result.days.size(); ++i) {
    const auto& d = result.days[i];
    os << format_yyyymmdd(d.date) << ',' << d.r_hat << ',' << d.new_cases << ',' << d.cumulative
       << ',' << d.active << ',' << band.days[i].cases_q25 << ',' << band.days[i].cases_q75 << '\n';
  }
}

}  // namespace esp
