#pragma once

// RIO: a Gaussian process on predictor residuals with an input/output sum
// kernel, and Monte-Carlo quantile bands built on its predictive distribution.

#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "esp/data.hpp"
#include "esp/forecast.hpp"
#include "esp/predictor.hpp"

namespace esp {

/// Squared-exponential input and output kernels plus observation noise.
struct GpHyperparameters {
  double input_variance = 1.0;
  double input_length = 1.0;
  double output_variance = 1.0;
  double output_length = 1.0;
  double noise_variance = 1e-2;

  bool valid() const;
};

struct CalibratedPrediction {
  double mean = 0.0;                 // r_hat + residual mean
  double variance = 0.0;             // latent residual variance, clamped at 0
  double predictive_variance = 0.0;  // variance + noise variance
};

class GpModel {
 public:
  GpModel() = default;
  /// Fits the posterior for fixed hyperparameters. Throws NumericalError if
  /// the Cholesky factorisation fails with jitter up to 1e-2.
  GpModel(Eigen::MatrixXd features, Eigen::VectorXd r_hat, Eigen::VectorXd residuals,
          GpHyperparameters hyper);

  CalibratedPrediction calibrate(const Eigen::VectorXd& feature, double r_hat) const;
  /// Columns of `features` are queries.
  std::vector<CalibratedPrediction> calibrate_batch(const Eigen::MatrixXd& features,
                                                    std::span<const double> r_hat) const;
  double kernel(const Eigen::VectorXd& a, double ra, const Eigen::VectorXd& b, double rb) const;
  double log_marginal_likelihood() const { return lml_; }

  const GpHyperparameters& hyper() const { return hyper_; }
  const Eigen::MatrixXd& features() const { return features_; }  // d x n
  const Eigen::VectorXd& r_hat() const { return r_hat_; }
  const Eigen::VectorXd& residuals() const { return residuals_; }
  double jitter() const { return jitter_; }
  int feature_dim() const { return static_cast<int>(features_.rows()); }
  std::size_t size() const { return static_cast<std::size_t>(residuals_.size()); }

  // Bookkeeping carried into the snapshot.
  std::vector<std::size_t> subsample;
  std::string dataset_fingerprint;

 private:
  GpHyperparameters hyper_;
  Eigen::MatrixXd features_;
  Eigen::VectorXd r_hat_;
  Eigen::VectorXd residuals_;
  Eigen::MatrixXd chol_;  // lower factor of K_c + (noise + jitter) I
  Eigen::VectorXd alpha_;
  double jitter_ = 0.0;
  double lml_ = 0.0;
};

/// Log marginal likelihood of `residuals` and, when `grad` is given, its
/// gradient with respect to the log of each hyperparameter, in field order.
/// Returns -inf if the kernel matrix is not positive definite.
double log_marginal_likelihood(const Eigen::MatrixXd& features, const Eigen::VectorXd& r_hat,
                               const Eigen::VectorXd& residuals, const GpHyperparameters& hyper,
                               Eigen::Matrix<double, 5, 1>* grad = nullptr);

struct RioSample {
  Eigen::VectorXd feature;  // hidden_g then hidden_h
  double r_hat = 0.0;
  double target = 0.0;
  std::string country;
  Date date{};
};

struct RioOptions {
  double outlier_ratio = 2.0;
  int drop_first = 10;
  int test_days = 14;
  std::size_t max_train = 2000;
  std::size_t max_hyperopt = 400;
  int restarts = 8;
  int max_iterations = 200;
  std::uint64_t seed = 0;
};

struct RioFitReport {
  std::vector<double> start_lml;  // at each multi-start initial point
  std::vector<double> final_lml;  // after ascent from that point
  double best_lml = 0.0;
};

struct RioData {
  std::vector<RioSample> train;
  std::vector<RioSample> heldout;
};

/// Per-country one-step MAE on raw targets over every sample of the country.
std::map<std::string, double> per_country_mae(const PredictorModel& model,
                                              const SeriesMap& series);

/// Among the first `top_n` of `by_cases`, those with MAE < threshold. When
/// none pass, all `top_n` are returned and a warning is appended.
std::vector<std::string> select_rio_countries(const std::vector<std::string>& by_cases,
                                              const std::map<std::string, double>& mae,
                                              double threshold = 0.04, int top_n = 30,
                                              std::vector<std::string>* warnings = nullptr);

/// Outlier and early-day removal, then a random per-country hold-out.
RioData prepare_rio_data(const PredictorModel& model, const SeriesMap& series,
                         const std::vector<std::string>& countries, const RioOptions& opts);

/// Multi-start gradient ascent on the log marginal likelihood, then the final
/// posterior on at most `max_train` samples. Needs at least 30 samples.
GpModel fit_rio(std::span<const RioSample> train, const RioOptions& opts,
                RioFitReport* report = nullptr);
GpModel fit_rio(const Eigen::MatrixXd& features, const Eigen::VectorXd& r_hat,
                const Eigen::VectorXd& targets, const RioOptions& opts,
                RioFitReport* report = nullptr);

/// A per-window Gaussian over the next ratio.
class RatioDistribution {
 public:
  virtual ~RatioDistribution() = default;
  virtual void distribution_batch(std::span<const PredictorInput> inputs, std::span<double> mean,
                                  std::span<double> variance) const = 0;
};

/// Predictor plus RIO calibration, using the predictive variance.
class RioDistribution final : public RatioDistribution {
 public:
  RioDistribution(const PredictorModel& model, const GpModel& gp) : model_(&model), gp_(&gp) {}
  void distribution_batch(std::span<const PredictorInput> inputs, std::span<double> mean,
                          std::span<double> variance) const override;

 private:
  const PredictorModel* model_;
  const GpModel* gp_;
};

struct BandDay {
  Date date{};
  double r_q25 = 0.0, r_q50 = 0.0, r_q75 = 0.0;
  double cases_q25 = 0.0, cases_q50 = 0.0, cases_q75 = 0.0;
};

struct ForecastBand {
  std::string country;
  Date start_date{};
  int n_rollouts = 0;
  std::uint64_t seed = 0;
  std::vector<BandDay> days;
};

/// Linear-interpolation quantile of an unsorted sample.
double empirical_quantile(std::vector<double> values, double q);

/// Rollout i samples every ratio from N(mean, variance) with an RNG seeded
/// seed + i, clamps at 0 and feeds the sample back.
ForecastBand mc_forecast(const RatioDistribution& dist, const ForecastRequest& request,
                         int n_rollouts = 100, std::uint64_t seed = 0);

/// Deterministic forecast CSV with q25,q75 case columns appended.
void write_band_csv(std::ostream& os, const ForecastResult& result, const ForecastBand& band);

}  // namespace esp
