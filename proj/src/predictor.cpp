#include "esp/predictor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace esp {

namespace {

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

constexpr double kActionInitScale = 0.3;

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

// Vectorised; exp overflow gives exactly 0 or 1.
Eigen::MatrixXd sigmoid(const Eigen::MatrixXd& m) {
  return (1.0 + (-m.array()).exp()).inverse().matrix();
}

Eigen::MatrixXd tanh_fast(const Eigen::MatrixXd& m) {
  return (2.0 * (1.0 + (-2.0 * m.array()).exp()).inverse() - 1.0).matrix();
}

/// Per-step activations of one branch over a batch, kept for backprop.
struct BranchTrace {
  std::vector<Eigen::MatrixXd> x;  // D x B
  std::vector<Eigen::MatrixXd> i, f, g, o, c, tanh_c;
  std::vector<Eigen::MatrixXd> h;  // h[0] = 0, h[t+1] after step t
  Eigen::RowVectorXd head_pre;
  Eigen::RowVectorXd head_out;
};

void run_branch(const LstmBranchParams& p, std::vector<Eigen::MatrixXd> inputs,
                BranchTrace& tr) {
  const int H = p.hidden_size();
  const auto B = inputs.front().cols();
  const auto T = inputs.size();
  tr.x = std::move(inputs);
  for (auto* v : {&tr.i, &tr.f, &tr.g, &tr.o, &tr.c, &tr.tanh_c}) v->resize(T);
  tr.h.assign(T + 1, Eigen::MatrixXd::Zero(H, B));
  Eigen::MatrixXd c_prev = Eigen::MatrixXd::Zero(H, B);
  Eigen::MatrixXd z(4 * H, B);
  for (std::size_t t = 0; t < T; ++t) {
    z.noalias() = p.input_weights * tr.x[t];
    z.noalias() += p.recurrent_weights * tr.h[t];
    z.colwise() += p.bias;
    tr.i[t] = sigmoid(z.topRows(H));
    tr.f[t] = sigmoid(z.middleRows(H, H));
    tr.g[t] = tanh_fast(z.middleRows(2 * H, H));
    tr.o[t] = sigmoid(z.bottomRows(H));
    tr.c[t] = tr.f[t].cwiseProduct(c_prev) + tr.i[t].cwiseProduct(tr.g[t]);
    tr.tanh_c[t] = tanh_fast(tr.c[t]);
    tr.h[t + 1] = tr.o[t].cwiseProduct(tr.tanh_c[t]);
    c_prev = tr.c[t];
  }
  tr.head_pre = (p.head_weights.transpose() * tr.h[T]).array() + p.head_bias;
  if (p.activation == HeadActivation::kSigmoid) {
    tr.head_out = tr.head_pre.unaryExpr([](double v) { return sigmoid(v); });
  } else {
    tr.head_out = tr.head_pre.unaryExpr([](double v) { return softplus(v); });
  }
}

/// Accumulates parameter gradients given dL/d(head output) per batch column.
void backprop_branch(const LstmBranchParams& p, const BranchTrace& tr,
                     const Eigen::RowVectorXd& d_out, LstmBranchParams& grad) {
  const int H = p.hidden_size();
  const auto T = tr.x.size();
  const auto B = d_out.size();
  Eigen::RowVectorXd d_pre(B);
  for (Eigen::Index b = 0; b < B; ++b) {
    const double s = sigmoid(tr.head_pre[b]);
    d_pre[b] = d_out[b] * (p.activation == HeadActivation::kSigmoid ? s * (1.0 - s) : s);
  }
  grad.head_weights.noalias() += tr.h[T] * d_pre.transpose();
  grad.head_bias += d_pre.sum();

  Eigen::MatrixXd dh = p.head_weights * d_pre;  // H x B
  Eigen::MatrixXd dc_next = Eigen::MatrixXd::Zero(H, B);
  Eigen::MatrixXd dz(4 * H, B);
  for (std::size_t s = T; s-- > 0;) {
    const auto& tc = tr.tanh_c[s];
    Eigen::MatrixXd d_o = dh.cwiseProduct(tc);
    Eigen::MatrixXd dc =
        dc_next + dh.cwiseProduct(tr.o[s]).cwiseProduct((1.0 - tc.array().square()).matrix());
    const Eigen::MatrixXd c_prev = s > 0 ? tr.c[s - 1] : Eigen::MatrixXd::Zero(H, B);
    dz.topRows(H) = dc.cwiseProduct(tr.g[s]).cwiseProduct(
        (tr.i[s].array() * (1.0 - tr.i[s].array())).matrix());
    dz.middleRows(H, H) = dc.cwiseProduct(c_prev).cwiseProduct(
        (tr.f[s].array() * (1.0 - tr.f[s].array())).matrix());
    dz.middleRows(2 * H, H) =
        dc.cwiseProduct(tr.i[s]).cwiseProduct((1.0 - tr.g[s].array().square()).matrix());
    dz.bottomRows(H) =
        d_o.cwiseProduct((tr.o[s].array() * (1.0 - tr.o[s].array())).matrix());
    dc_next = dc.cwiseProduct(tr.f[s]);
    grad.input_weights.noalias() += dz * tr.x[s].transpose();
    grad.recurrent_weights.noalias() += dz * tr.h[s].transpose();
    grad.bias += dz.rowwise().sum();
    dh.noalias() = p.recurrent_weights.transpose() * dz;
  }
}

std::vector<Eigen::MatrixXd> action_inputs(std::span<const PredictorInput> batch) {
  const auto T = batch.front().actions.size();
  const auto B = static_cast<Eigen::Index>(batch.size());
  std::vector<Eigen::MatrixXd> xs(T, Eigen::MatrixXd(kNumNpis, B));
  for (Eigen::Index b = 0; b < B; ++b) {
    const auto& a = batch[static_cast<std::size_t>(b)].actions;
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t k = 0; k < kNumNpis; ++k) {
        xs[t](static_cast<Eigen::Index>(k), b) =
            static_cast<double>(a[t].levels[k]) / kNpiMax[k];
      }
    }
  }
  return xs;
}

std::vector<Eigen::MatrixXd> ratio_inputs(std::span<const PredictorInput> batch) {
  const auto T = batch.front().ratios.size();
  const auto B = static_cast<Eigen::Index>(batch.size());
  std::vector<Eigen::MatrixXd> xs(T, Eigen::MatrixXd(1, B));
  for (Eigen::Index b = 0; b < B; ++b) {
    const auto& r = batch[static_cast<std::size_t>(b)].ratios;
    for (std::size_t t = 0; t < T; ++t) xs[t](0, b) = r[t];
  }
  return xs;
}

void check_shapes(const PredictorModel& model, std::span<const PredictorInput> batch) {
  if (batch.empty()) throw ShapeError("empty batch");
  const auto T = batch.front().actions.size();
  if (T == 0) throw ShapeError("empty history window");
  if (model.action.input_size() != static_cast<int>(kNumNpis) ||
      model.context.input_size() != 1) {
    throw ShapeError("predictor branches have unexpected input widths");
  }
  for (const auto& in : batch) {
    if (in.actions.size() != T || in.ratios.size() != T) {
      throw ShapeError("action window has " + std::to_string(in.actions.size()) +
                       " rows and ratio window " + std::to_string(in.ratios.size()) +
                       " values; expected " + std::to_string(T) + " each");
    }
  }
}

struct ModelTrace {
  BranchTrace action;
  BranchTrace context;
  Eigen::RowVectorXd r_hat;
};

ModelTrace run_model(const PredictorModel& model, std::span<const PredictorInput> batch) {
  check_shapes(model, batch);
  ModelTrace tr;
  run_branch(model.action, action_inputs(batch), tr.action);
  run_branch(model.context, ratio_inputs(batch), tr.context);
  tr.r_hat = (1.0 - tr.action.head_out.array()) * tr.context.head_out.array();
  return tr;
}

LstmBranchParams zeros_like(const LstmBranchParams& p) {
  return LstmBranchParams::zeros(p.input_size(), p.hidden_size(), p.activation);
}

std::vector<PredictorInput> as_inputs(std::span<const TrainingSample* const> samples) {
  std::vector<PredictorInput> in;
  in.reserve(samples.size());
  for (const auto* s : samples) in.push_back({s->actions, s->ratios});
  return in;
}

}  // namespace

std::size_t LstmBranchParams::parameter_count() const {
  std::size_t n = 0;
  for_each_tensor(*this, [&](const double*, std::size_t k) { n += k; });
  return n;
}

LstmBranchParams LstmBranchParams::zeros(int input_size, int hidden_size, HeadActivation act) {
  LstmBranchParams p;
  p.input_weights = Eigen::MatrixXd::Zero(4 * hidden_size, input_size);
  p.recurrent_weights = Eigen::MatrixXd::Zero(4 * hidden_size, hidden_size);
  p.bias = Eigen::VectorXd::Zero(4 * hidden_size);
  p.head_weights = Eigen::VectorXd::Zero(hidden_size);
  p.head_bias = 0.0;
  p.activation = act;
  return p;
}

LstmBranchParams LstmBranchParams::initialized(int input_size, int hidden_size,
                                               HeadActivation act, std::mt19937_64& rng) {
  auto p = zeros(input_size, hidden_size, act);
  auto fill = [&](Eigen::MatrixXd& m, int fan_in, int fan_out) {
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> u(-limit, limit);
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = u(rng);
    }
  };
  fill(p.input_weights, input_size, 4 * hidden_size);
  fill(p.recurrent_weights, hidden_size, 4 * hidden_size);
  Eigen::MatrixXd head(hidden_size, 1);
  fill(head, hidden_size, 1);
  p.head_weights = head.col(0);
  p.bias.segment(hidden_size, hidden_size).setOnes();
  return p;
}

PredictorModel PredictorModel::zeros(int hidden) {
  PredictorModel m;
  m.action = LstmBranchParams::zeros(kNumNpis, hidden, HeadActivation::kSigmoid);
  m.context = LstmBranchParams::zeros(1, hidden, HeadActivation::kSoftplus);
  return m;
}

PredictorModel PredictorModel::initialized(std::uint64_t seed, int hidden) {
  std::mt19937_64 rng(seed);
  PredictorModel m;
  m.action = LstmBranchParams::initialized(kNumNpis, hidden, HeadActivation::kSigmoid, rng);
  m.context = LstmBranchParams::initialized(1, hidden, HeadActivation::kSoftplus, rng);
  project_nonneg(m.action);
  // Non-negative weights on non-negative inputs saturate the gates at full scale.
  m.action.input_weights *= kActionInitScale;
  m.action.recurrent_weights *= kActionInitScale;
  m.action.bias *= kActionInitScale;
  m.meta.seed = seed;
  return m;
}

BatchOutput forward_batch(const PredictorModel& model, std::span<const PredictorInput> inputs) {
  auto tr = run_model(model, inputs);
  BatchOutput out;
  out.r_hat = tr.r_hat.transpose();
  out.hidden_action = std::move(tr.action.h.back());
  out.hidden_context = std::move(tr.context.h.back());
  return out;
}

PredictorOutput forward(const PredictorModel& model, std::span<const NpiVector> actions,
                        std::span<const double> ratios) {
  const PredictorInput in{actions, ratios};
  auto tr = run_model(model, std::span<const PredictorInput>(&in, 1));
  PredictorOutput out;
  out.r_hat = tr.r_hat[0];
  out.g = tr.action.head_out[0];
  out.h = tr.context.head_out[0];
  out.hidden_action = tr.action.h.back().col(0);
  out.hidden_context = tr.context.h.back().col(0);
  return out;
}

void project_nonneg(LstmBranchParams& action_branch) {
  action_branch.input_weights = action_branch.input_weights.cwiseAbs();
  action_branch.recurrent_weights = action_branch.recurrent_weights.cwiseAbs();
  action_branch.bias = action_branch.bias.cwiseAbs();
  action_branch.head_weights = action_branch.head_weights.cwiseAbs();
}

LossAndGradient mae_loss_and_gradient(const PredictorModel& model,
                                      std::span<const TrainingSample* const> samples) {
  auto inputs = as_inputs(samples);
  auto tr = run_model(model, inputs);
  const auto B = static_cast<Eigen::Index>(samples.size());
  LossAndGradient out;
  out.action_grad = zeros_like(model.action);
  out.context_grad = zeros_like(model.context);
  Eigen::RowVectorXd d_r(B);
  double loss = 0.0;
  for (Eigen::Index b = 0; b < B; ++b) {
    const double diff = tr.r_hat[b] - samples[static_cast<std::size_t>(b)]->target;
    loss += std::abs(diff);
    d_r[b] = (diff > 0 ? 1.0 : diff < 0 ? -1.0 : 0.0) / static_cast<double>(B);
  }
  out.loss = loss / static_cast<double>(B);
  // R = (1 - g) h
  Eigen::RowVectorXd d_g = -d_r.cwiseProduct(tr.context.head_out);
  Eigen::RowVectorXd d_h = d_r.cwiseProduct((1.0 - tr.action.head_out.array()).matrix());
  backprop_branch(model.action, tr.action, d_g, out.action_grad);
  backprop_branch(model.context, tr.context, d_h, out.context_grad);
  return out;
}

double mae(const PredictorModel& model, std::span<const TrainingSample> samples,
           bool use_raw_targets) {
  if (samples.empty()) return 0.0;
  constexpr std::size_t kChunk = 256;
  double total = 0.0;
  std::vector<PredictorInput> in;
  for (std::size_t start = 0; start < samples.size(); start += kChunk) {
    const auto end = std::min(samples.size(), start + kChunk);
    in.clear();
    for (std::size_t i = start; i < end; ++i) in.push_back({samples[i].actions, samples[i].ratios});
    auto out = forward_batch(model, in);
    for (std::size_t i = start; i < end; ++i) {
      const double target = use_raw_targets ? samples[i].raw_target : samples[i].target;
      total += std::abs(out.r_hat[static_cast<Eigen::Index>(i - start)] - target);
    }
  }
  return total / static_cast<double>(samples.size());
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (patience < 1) throw ConfigError("patience must be >= 1");
  if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
  if (!(learning_rate > 0)) throw ConfigError("learning_rate must be positive");
}

namespace {

struct AdamState {
  std::vector<double> m, v;
  long step = 0;
};

std::vector<double*> param_pointers(PredictorModel& model, std::vector<std::size_t>& sizes) {
  std::vector<double*> ptrs;
  sizes.clear();
  auto collect = [&](double* p, std::size_t n) {
    ptrs.push_back(p);
    sizes.push_back(n);
  };
  for_each_tensor(model.action, collect);
  for_each_tensor(model.context, collect);
  return ptrs;
}

void adam_step(PredictorModel& model, LossAndGradient& grad, AdamState& st,
               const TrainConfig& cfg) {
  std::vector<std::size_t> sizes, gsizes;
  auto params = param_pointers(model, sizes);
  std::vector<double*> grads;
  auto collect = [&](double* p, std::size_t n) {
    grads.push_back(p);
    gsizes.push_back(n);
  };
  for_each_tensor(grad.action_grad, collect);
  for_each_tensor(grad.context_grad, collect);
  const std::size_t total = std::accumulate(sizes.begin(), sizes.end(), std::size_t{0});
  if (st.m.empty()) {
    st.m.assign(total, 0.0);
    st.v.assign(total, 0.0);
  }
  ++st.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.step));
  std::size_t off = 0;
  for (std::size_t t = 0; t < params.size(); ++t) {
    for (std::size_t j = 0; j < sizes[t]; ++j, ++off) {
      const double g = grads[t][j];
      st.m[off] = cfg.beta1 * st.m[off] + (1.0 - cfg.beta1) * g;
      st.v[off] = cfg.beta2 * st.v[off] + (1.0 - cfg.beta2) * g * g;
      const double mhat = st.m[off] / bc1;
      const double vhat = st.v[off] / bc2;
      params[t][j] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.epsilon);
    }
  }
}

}  // namespace

PredictorModel train(PredictorModel model, const DatasetSplit& dataset, const TrainConfig& cfg,
                     TrainLog* log) {
  cfg.validate();
  if (dataset.train.empty()) throw DataError("train: empty training set");
  if (dataset.validation.empty()) throw DataError("train: empty validation set");

  project_nonneg(model.action);
  std::vector<const TrainingSample*> order;
  order.reserve(dataset.train.size());
  for (const auto& s : dataset.train) order.push_back(&s);

  AdamState adam;
  PredictorModel best = model;
  double best_mae = mae(model, dataset.validation);
  int best_epoch = 0;
  int since_best = 0;
  int epoch = 0;
  const auto batch = static_cast<std::size_t>(cfg.batch_size);
  while (epoch < cfg.max_epochs) {
    ++epoch;
    std::mt19937_64 rng(cfg.seed ^ (0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);
    double train_loss = 0.0;
    int b = 0;
    for (std::size_t start = 0; start < order.size(); start += batch, ++b) {
      const auto end = std::min(order.size(), start + batch);
      auto lg = mae_loss_and_gradient(
          model, std::span<const TrainingSample* const>(order.data() + start, end - start));
      if (!std::isfinite(lg.loss)) throw TrainingDiverged(epoch, b);
      train_loss += lg.loss * static_cast<double>(end - start);
      adam_step(model, lg, adam, cfg);
      project_nonneg(model.action);
    }
    const double val = mae(model, dataset.validation);
    if (!std::isfinite(val)) throw TrainingDiverged(epoch, b - 1);
    if (log) {
      log->train_mae.push_back(train_loss / static_cast<double>(order.size()));
      log->validation_mae.push_back(val);
    }
    if (val < best_mae) {
      best_mae = val;
      best = model;
      best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  best.meta.epochs_run = epoch;
  best.meta.best_epoch = best_epoch;
  best.meta.best_validation_mae = best_mae;
  best.meta.seed = cfg.seed;
  return best;
}

double gradient_check(const PredictorModel& model, const TrainingSample& sample, double epsilon,
                      double floor) {
  const TrainingSample* ptr = &sample;
  const std::span<const TrainingSample* const> one(&ptr, 1);
  auto analytic = mae_loss_and_gradient(model, one);
  std::vector<double> grads;
  auto collect = [&](const double* p, std::size_t n) { grads.insert(grads.end(), p, p + n); };
  for_each_tensor(analytic.action_grad, collect);
  for_each_tensor(analytic.context_grad, collect);

  auto loss_of = [&](const PredictorModel& m) {
    return std::abs(forward(m, sample.actions, sample.ratios).r_hat - sample.target);
  };
  PredictorModel probe = model;
  std::vector<std::size_t> sizes;
  auto params = param_pointers(probe, sizes);
  double worst = 0.0;
  std::size_t k = 0;
  for (std::size_t t = 0; t < params.size(); ++t) {
    for (std::size_t j = 0; j < sizes[t]; ++j, ++k) {
      const double orig = params[t][j];
      params[t][j] = orig + epsilon;
      const double up = loss_of(probe);
      params[t][j] = orig - epsilon;
      const double down = loss_of(probe);
      params[t][j] = orig;
      const double numeric = (up - down) / (2.0 * epsilon);
      const double denom = std::max({std::abs(grads[k]), std::abs(numeric), floor});
      worst = std::max(worst, std::abs(grads[k] - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace esp
