#pragma once

// Factored recurrent ratio predictor R = (1 - g(A)) h(r): an action branch g
// over past NPI levels and a context branch h over past ratios, each a single
// LSTM layer followed by a one-unit dense head.

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "esp/data.hpp"
#include "esp/error.hpp"
#include "esp/npi.hpp"

namespace esp {

inline constexpr int kHiddenUnits = 32;

enum class HeadActivation { kSigmoid, kSoftplus };

/// One LSTM layer plus dense head. Gate blocks are stacked in the order
/// input, forget, candidate, output.
struct LstmBranchParams {
  Eigen::MatrixXd input_weights;      // 4H x D
  Eigen::MatrixXd recurrent_weights;  // 4H x H
  Eigen::VectorXd bias;               // 4H
  Eigen::VectorXd head_weights;       // H
  double head_bias = 0.0;
  HeadActivation activation = HeadActivation::kSigmoid;

  int input_size() const { return static_cast<int>(input_weights.cols()); }
  int hidden_size() const { return static_cast<int>(recurrent_weights.cols()); }
  std::size_t parameter_count() const;

  static LstmBranchParams zeros(int input_size, int hidden_size, HeadActivation act);
  /// Glorot-uniform weights, forget-gate bias 1, other biases 0.
  static LstmBranchParams initialized(int input_size, int hidden_size, HeadActivation act,
                                      std::mt19937_64& rng);
};

/// Calls f(double* data, std::size_t n) for every tensor; the head bias last.
template <class Branch, class F>
void for_each_tensor(Branch& b, F&& f) {
  f(b.input_weights.data(), static_cast<std::size_t>(b.input_weights.size()));
  f(b.recurrent_weights.data(), static_cast<std::size_t>(b.recurrent_weights.size()));
  f(b.bias.data(), static_cast<std::size_t>(b.bias.size()));
  f(b.head_weights.data(), static_cast<std::size_t>(b.head_weights.size()));
  f(&b.head_bias, std::size_t{1});
}

struct TrainingMeta {
  int epochs_run = 0;
  int best_epoch = -1;
  double best_validation_mae = 0.0;
  std::uint64_t seed = 0;
  std::string dataset_fingerprint;
};

struct PredictorModel {
  LstmBranchParams action;   // g, sigmoid head, non-negative except head bias
  LstmBranchParams context;  // h, softplus head
  TrainingMeta meta;

  std::size_t parameter_count() const {
    return action.parameter_count() + context.parameter_count();
  }

  static PredictorModel zeros(int hidden = kHiddenUnits);
  /// Random init with the action branch already projected.
  static PredictorModel initialized(std::uint64_t seed, int hidden = kHiddenUnits);
};

struct PredictorOutput {
  double r_hat = 0.0;
  double g = 0.0;
  double h = 0.0;
  Eigen::VectorXd hidden_action;   // final-step state of g
  Eigen::VectorXd hidden_context;  // final-step state of h
};

/// Input windows for one prediction: `history` rows of NPI levels and ratios,
/// oldest first.
struct PredictorInput {
  std::span<const NpiVector> actions;
  std::span<const double> ratios;
};

PredictorOutput forward(const PredictorModel& model, std::span<const NpiVector> actions,
                        std::span<const double> ratios);

/// Batched forward; columns of the returned matrices index the batch.
struct BatchOutput {
  Eigen::VectorXd r_hat;
  Eigen::MatrixXd hidden_action;   // H x B
  Eigen::MatrixXd hidden_context;  // H x B
};
BatchOutput forward_batch(const PredictorModel& model, std::span<const PredictorInput> inputs);

/// Replace every action-branch parameter by its absolute value, except the
/// dense-head bias.
void project_nonneg(LstmBranchParams& action_branch);

/// Mean absolute error of the model and its gradient over `samples`.
struct LossAndGradient {
  double loss = 0.0;
  LstmBranchParams action_grad;
  LstmBranchParams context_grad;
};
LossAndGradient mae_loss_and_gradient(const PredictorModel& model,
                                      std::span<const TrainingSample* const> samples);

double mae(const PredictorModel& model, std::span<const TrainingSample> samples,
           bool use_raw_targets = false);

struct TrainConfig {
  int batch_size = 32;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int patience = 20;
  int max_epochs = 1000;
  std::uint64_t seed = 0;

  void validate() const;
};

struct TrainLog {
  std::vector<double> train_mae;
  std::vector<double> validation_mae;
};

/// Thrown when the training loss becomes non-finite.
class TrainingDiverged : public NumericalError {
 public:
  TrainingDiverged(int epoch, int batch)
      : NumericalError("training diverged (non-finite loss) at epoch " +
                       std::to_string(epoch) + ", batch " + std::to_string(batch)),
        epoch_(epoch),
        batch_(batch) {}
  int epoch() const noexcept { return epoch_; }
  int batch() const noexcept { return batch_; }

 private:
  int epoch_;
  int batch_;
};

/// Adam on the MAE loss with the action branch projected after every step,
/// early stopping on validation MAE and restoration of the best epoch.
PredictorModel train(PredictorModel model, const DatasetSplit& dataset,
                     const TrainConfig& cfg, TrainLog* log = nullptr);

/// Max relative discrepancy between analytic and central-difference
/// gradients of the single-sample MAE loss over all parameters.
/// Relative error is |a - n| / max(|a|, |n|, floor).
double gradient_check(const PredictorModel& model, const TrainingSample& sample,
                      double epsilon = 1e-5, double floor = 1e-6);

}  // namespace esp
