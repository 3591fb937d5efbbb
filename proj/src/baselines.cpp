#include "esp/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "esp/error.hpp"

namespace esp {

Eigen::VectorXd flatten_window(std::span<const NpiVector> actions,
                               std::span<const double> ratios) {
  if (actions.size() != ratios.size()) throw ShapeError("window length mismatch");
  Eigen::VectorXd x(static_cast<Eigen::Index>(actions.size() * (kNumNpis + 1)));
  Eigen::Index j = 0;
  for (std::size_t t = 0; t < actions.size(); ++t) {
    for (std::size_t k = 0; k < kNumNpis; ++k) x[j++] = actions[t].levels[k];
    x[j++] = ratios[t];
  }
  return x;
}

namespace {

Eigen::MatrixXd design_matrix(std::span<const TrainingSample> samples) {
  const auto width = flatten_window(samples[0].actions, samples[0].ratios).size();
  Eigen::MatrixXd X(static_cast<Eigen::Index>(samples.size()), width);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    X.row(static_cast<Eigen::Index>(i)) =
        flatten_window(samples[i].actions, samples[i].ratios).transpose();
  }
  return X;
}

Eigen::VectorXd targets(std::span<const TrainingSample> samples) {
  Eigen::VectorXd y(static_cast<Eigen::Index>(samples.size()));
  for (std::size_t i = 0; i < samples.size(); ++i) y[static_cast<Eigen::Index>(i)] = samples[i].target;
  return y;
}

}  // namespace

LinearBaseline LinearBaseline::fit(std::span<const TrainingSample> samples) {
  if (samples.empty()) throw DataError("linear baseline: no samples");
  const Eigen::MatrixXd X = design_matrix(samples);
  const Eigen::VectorXd y = targets(samples);
  // Centering removes the intercept from the solve.
  const Eigen::RowVectorXd mean_x = X.colwise().mean();
  const double mean_y = y.mean();
  const Eigen::MatrixXd Xc = X.rowwise() - mean_x;
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(Xc);
  LinearBaseline m;
  m.coefficients = cod.solve((y.array() - mean_y).matrix());
  m.intercept = mean_y - mean_x.dot(m.coefficients);
  m.rank_deficient = cod.rank() < Xc.cols();
  return m;
}

double LinearBaseline::predict(std::span<const NpiVector> actions,
                               std::span<const double> ratios) const {
  auto x = flatten_window(actions, ratios);
  if (x.size() != coefficients.size()) throw ShapeError("linear baseline: window size mismatch");
  return intercept + coefficients.dot(x);
}

MlpBaseline MlpBaseline::fit(std::span<const TrainingSample> samples, const MlpConfig& cfg) {
  if (samples.empty()) throw DataError("mlp baseline: no samples");
  const Eigen::MatrixXd X = design_matrix(samples).transpose();  // inputs x n
  const Eigen::VectorXd y = targets(samples);
  const auto n_in = X.rows();
  const auto n = X.cols();
  const int H = cfg.hidden;

  std::mt19937_64 rng(cfg.seed);
  MlpBaseline m;
  auto glorot = [&](Eigen::Index rows, Eigen::Index cols, Eigen::Index fan_in,
                    Eigen::Index fan_out) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> u(-limit, limit);
    Eigen::MatrixXd w(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
      for (Eigen::Index i = 0; i < rows; ++i) w(i, j) = u(rng);
    return w;
  };
  m.hidden_weights = glorot(H, n_in, n_in, H);
  m.hidden_bias = glorot(H, 1, n_in, H).col(0);
  m.output_weights = glorot(H, 1, H, 1).col(0);
  m.output_bias = y.mean();

  // Adam state, flattened over the four tensors.
  const Eigen::Index n_params = H * n_in + H + H + 1;
  Eigen::VectorXd am = Eigen::VectorXd::Zero(n_params), av = Eigen::VectorXd::Zero(n_params);
  long step = 0;
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  const auto batch = std::min<Eigen::Index>(cfg.batch_size, n);
  double best_loss = std::numeric_limits<double>::infinity();
  int no_improve = 0;
  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (Eigen::Index start = 0; start < n; start += batch) {
      const auto end = std::min(n, start + batch);
      const auto B = end - start;
      Eigen::MatrixXd xb(n_in, B);
      Eigen::VectorXd yb(B);
      for (Eigen::Index j = 0; j < B; ++j) {
        xb.col(j) = X.col(order[static_cast<std::size_t>(start + j)]);
        yb[j] = y[order[static_cast<std::size_t>(start + j)]];
      }
      Eigen::MatrixXd pre = m.hidden_weights * xb;
      pre.colwise() += m.hidden_bias;
      Eigen::MatrixXd act = pre.cwiseMax(0.0);
      Eigen::VectorXd out = (m.output_weights.transpose() * act).transpose();
      out.array() += m.output_bias;
      Eigen::VectorXd diff = out - yb;
      epoch_loss += diff.squaredNorm() / 2.0;
      // Gradients of 0.5 * mean squared error + 0.5 * l2 * |W|^2 / B.
      Eigen::VectorXd d_out = diff / static_cast<double>(B);
      Eigen::VectorXd g_w2 = act * d_out + cfg.l2 * m.output_weights / static_cast<double>(B);
      double g_b2 = d_out.sum();
      Eigen::MatrixXd d_act = m.output_weights * d_out.transpose();
      Eigen::MatrixXd d_pre = d_act.cwiseProduct((pre.array() > 0.0).cast<double>().matrix());
      Eigen::MatrixXd g_w1 = d_pre * xb.transpose() + cfg.l2 * m.hidden_weights / static_cast<double>(B);
      Eigen::VectorXd g_b1 = d_pre.rowwise().sum();

      ++step;
      const double c1 = 1.0 - std::pow(b1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(b2, static_cast<double>(step));
      Eigen::Index off = 0;
      auto update = [&](double* p, const double* g, Eigen::Index len) {
        for (Eigen::Index i = 0; i < len; ++i, ++off) {
          am[off] = b1 * am[off] + (1 - b1) * g[i];
          av[off] = b2 * av[off] + (1 - b2) * g[i] * g[i];
          p[i] -= cfg.learning_rate * (am[off] / c1) / (std::sqrt(av[off] / c2) + eps);
        }
      };
      update(m.hidden_weights.data(), g_w1.data(), g_w1.size());
      update(m.hidden_bias.data(), g_b1.data(), g_b1.size());
      update(m.output_weights.data(), g_w2.data(), g_w2.size());
      update(&m.output_bias, &g_b2, 1);
    }
    epoch_loss /= static_cast<double>(n);
    m.epochs_run = epoch + 1;
    if (!std::isfinite(epoch_loss)) throw NumericalError("mlp baseline diverged");
    if (epoch_loss > best_loss - cfg.tolerance) {
      if (++no_improve >= cfg.no_change_epochs) break;
    } else {
      no_improve = 0;
    }
    best_loss = std::min(best_loss, epoch_loss);
  }
  return m;
}

double MlpBaseline::predict(std::span<const NpiVector> actions,
                            std::span<const double> ratios) const {
  auto x = flatten_window(actions, ratios);
  if (x.size() != hidden_weights.cols()) throw ShapeError("mlp baseline: window size mismatch");
  Eigen::VectorXd a = (hidden_weights * x + hidden_bias).cwiseMax(0.0);
  return output_weights.dot(a) + output_bias;
}

std::unique_ptr<RatioPredictor> fit_baseline(BaselineKind kind,
                                             std::span<const TrainingSample> samples,
                                             std::uint64_t seed) {
  if (kind == BaselineKind::kLinear) {
    return std::make_unique<LinearBaseline>(LinearBaseline::fit(samples));
  }
  MlpConfig cfg;
  cfg.seed = seed;
  return std::make_unique<MlpBaseline>(MlpBaseline::fit(samples, cfg));
}

}  // namespace esp
