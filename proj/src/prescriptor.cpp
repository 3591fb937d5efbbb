#include "esp/prescriptor.hpp"

#include <cmath>
#include <cstring>

#include <Eigen/Dense>

#include "esp/error.hpp"

namespace esp {

std::array<double, kNumNpis> PrescriptorNet::raw_outputs(std::span<const double> r) const {
  if (r.size() != static_cast<std::size_t>(kPrescriptorInputs)) {
    throw ShapeError("prescriptor expects " + std::to_string(kPrescriptorInputs) + " ratios");
  }
  if (weights.size() != kGenomeSize) throw ShapeError("genome has the wrong length");
  std::array<double, kPrescriptorHidden> hidden{};
  const double* w1 = weights.data() + w1_offset();
  const double* b1 = weights.data() + b1_offset();
  for (int j = 0; j < kPrescriptorHidden; ++j) {
    double a = b1[j];
    for (int i = 0; i < kPrescriptorInputs; ++i) a += w1[j * kPrescriptorInputs + i] * r[static_cast<std::size_t>(i)];
    hidden[static_cast<std::size_t>(j)] = std::tanh(a);
  }
  std::array<double, kNumNpis> out{};
  const double* w2 = weights.data() + w2_offset();
  const double* b2 = weights.data() + b2_offset();
  for (int k = 0; k < kPrescriptorOutputs; ++k) {
    double a = b2[k];
    for (int j = 0; j < kPrescriptorHidden; ++j) a += w2[k * kPrescriptorHidden + j] * hidden[static_cast<std::size_t>(j)];
    out[static_cast<std::size_t>(k)] = 1.0 / (1.0 + std::exp(-a));
  }
  return out;
}

NpiVector prescribe(const PrescriptorNet& net, std::span<const double> ratio_window) {
  const auto raw = net.raw_outputs(ratio_window);
  NpiVector v;
  for (std::size_t k = 0; k < kNumNpis; ++k) {
    v.levels[k] = static_cast<int>(std::round(raw[k] * kNpiMax[k]));  // std::round is half-away
  }
  return v;
}

namespace {

// rows x cols matrix, row-major into `dst`.
void orthogonal_block(double* dst, int rows, int cols, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  const int big = std::max(rows, cols), small = std::min(rows, cols);
  Eigen::MatrixXd g(big, small);
  for (int j = 0; j < small; ++j)
    for (int i = 0; i < big; ++i) g(i, j) = n(rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(big, small);
  const Eigen::MatrixXd r = qr.matrixQR().topRows(small).triangularView<Eigen::Upper>();
  for (int j = 0; j < small; ++j) {
    if (r(j, j) < 0) q.col(j) *= -1.0;
  }
  Eigen::MatrixXd w = rows >= cols ? q : Eigen::MatrixXd(q.transpose());
  for (int i = 0; i < rows; ++i) w.row(i).normalize();
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) dst[i * cols + j] = w(i, j);
}

}  // namespace

PrescriptorNet PrescriptorNet::orthogonal(std::mt19937_64& rng) {
  PrescriptorNet net;
  orthogonal_block(net.weights.data() + net.w1_offset(), kPrescriptorHidden, kPrescriptorInputs, rng);
  orthogonal_block(net.weights.data() + net.w2_offset(), kPrescriptorOutputs, kPrescriptorHidden, rng);
  return net;
}

std::uint64_t genome_hash(std::span<const double> weights) {
  std::uint64_t h = 14695981039346656037ULL;
  for (double w : weights) {
    unsigned char bytes[sizeof(double)];
    std::memcpy(bytes, &w, sizeof(double));
    for (unsigned char b : bytes) {
      h ^= b;
      h *= 1099511628211ULL;
    }
  }
  return h;
}

}  // namespace esp
