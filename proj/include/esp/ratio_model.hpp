#pragma once

#include <span>
#include <string>

#include "esp/predictor.hpp"

namespace esp {

/// Anything that maps a (NPI window, ratio window) pair to a next-day ratio.
/// Implementations must be safe for concurrent calls.
class RatioPredictor {
 public:
  virtual ~RatioPredictor() = default;

  virtual double predict(std::span<const NpiVector> actions,
                         std::span<const double> ratios) const = 0;

  /// Default loops over predict().
  virtual void predict_batch(std::span<const PredictorInput> inputs,
                             std::span<double> out) const {
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      out[i] = predict(inputs[i].actions, inputs[i].ratios);
    }
  }

  virtual std::string name() const = 0;
};

/// The factored LSTM behind the RatioPredictor interface.
class NpiLstmPredictor final : public RatioPredictor {
 public:
  explicit NpiLstmPredictor(const PredictorModel& model) : model_(&model) {}

  double predict(std::span<const NpiVector> actions,
                 std::span<const double> ratios) const override {
    return forward(*model_, actions, ratios).r_hat;
  }
  void predict_batch(std::span<const PredictorInput> inputs,
                     std::span<double> out) const override {
    auto res = forward_batch(*model_, inputs);
    for (std::size_t i = 0; i < inputs.size(); ++i) out[i] = res.r_hat[static_cast<Eigen::Index>(i)];
  }
  std::string name() const override { return "NPI-LSTM"; }
  const PredictorModel& model() const { return *model_; }

 private:
  const PredictorModel* model_;
};

}  // namespace esp
