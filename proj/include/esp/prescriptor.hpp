#pragma once

// Fixed-topology prescriptor: 21 ratios -> 32 tanh -> 8 sigmoid, scaled to
// NPI levels. The weights live in one flat genome vector.

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "esp/npi.hpp"

namespace esp {

inline constexpr int kPrescriptorInputs = 21;
inline constexpr int kPrescriptorHidden = 32;
inline constexpr int kPrescriptorOutputs = static_cast<int>(kNumNpis);

/// Layout: W1 (32x21, row-major), b1 (32), W2 (8x32, row-major), b2 (8).
inline constexpr std::size_t kGenomeSize =
    kPrescriptorHidden * kPrescriptorInputs + kPrescriptorHidden +
    kPrescriptorOutputs * kPrescriptorHidden + kPrescriptorOutputs;

struct PrescriptorNet {
  std::vector<double> weights = std::vector<double>(kGenomeSize, 0.0);

  /// Sigmoid outputs in (0,1), before scaling.
  std::array<double, kNumNpis> raw_outputs(std::span<const double> ratio_window) const;

  /// Orthogonal weight matrices with unit-norm rows, zero biases.
  static PrescriptorNet orthogonal(std::mt19937_64& rng);

  std::size_t w1_offset() const { return 0; }
  std::size_t b1_offset() const { return kPrescriptorHidden * kPrescriptorInputs; }
  std::size_t w2_offset() const { return b1_offset() + kPrescriptorHidden; }
  std::size_t b2_offset() const { return w2_offset() + kPrescriptorOutputs * kPrescriptorHidden; }
};

/// Levels = round_half_away(raw * max level) per NPI.
NpiVector prescribe(const PrescriptorNet& net, std::span<const double> ratio_window);

/// FNV-1a over the weight bytes.
std::uint64_t genome_hash(std::span<const double> weights);

}  // namespace esp
