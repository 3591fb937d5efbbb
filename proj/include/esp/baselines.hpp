#pragma once

// Reference regressors over flattened windows: 21 days x (8 NPI levels + ratio).

#include <cstdint>
#include <memory>
#include <span>

#include <Eigen/Dense>

#include "esp/data.hpp"
#include "esp/ratio_model.hpp"

namespace esp {

enum class BaselineKind { kLinear, kMlp };

Eigen::VectorXd flatten_window(std::span<const NpiVector> actions, std::span<const double> ratios);

class LinearBaseline final : public RatioPredictor {
 public:
  /// Least squares with intercept; rank-deficient designs use the minimum-norm
  /// (pseudo-inverse) solution and set `rank_deficient`.
  static LinearBaseline fit(std::span<const TrainingSample> samples);

  double predict(std::span<const NpiVector> actions,
                 std::span<const double> ratios) const override;
  std::string name() const override { return "Linear"; }

  Eigen::VectorXd coefficients;
  double intercept = 0.0;
  bool rank_deficient = false;
};

struct MlpConfig {
  int hidden = 100;
  int max_epochs = 200;
  int batch_size = 200;
  double learning_rate = 1e-3;
  double l2 = 1e-4;
  double tolerance = 1e-4;
  int no_change_epochs = 10;
  std::uint64_t seed = 0;
};

/// One hidden ReLU layer trained with Adam on squared error.
class MlpBaseline final : public RatioPredictor {
 public:
  static MlpBaseline fit(std::span<const TrainingSample> samples, const MlpConfig& cfg = {});

  double predict(std::span<const NpiVector> actions,
                 std::span<const double> ratios) const override;
  std::string name() const override { return "MLP"; }

  Eigen::MatrixXd hidden_weights;  // hidden x inputs
  Eigen::VectorXd hidden_bias;
  Eigen::VectorXd output_weights;
  double output_bias = 0.0;
  int epochs_run = 0;
};

std::unique_ptr<RatioPredictor> fit_baseline(BaselineKind kind,
                                             std::span<const TrainingSample> samples,
                                             std::uint64_t seed = 0);

}  // namespace esp
