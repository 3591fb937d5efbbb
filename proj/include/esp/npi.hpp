#pragma once

#include <array>
#include <compare>
#include <cstddef>
#include <string_view>

namespace esp {

inline constexpr std::size_t kNumNpis = 8;

/// Maximum stringency level per NPI, ordered C1..C8.
inline constexpr std::array<int, kNumNpis> kNpiMax{3, 3, 2, 4, 2, 3, 2, 4};

inline constexpr int kMaxStringency = 23;

inline constexpr std::array<std::string_view, kNumNpis> kNpiNames{
    "C1_School closing",
    "C2_Workplace closing",
    "C3_Cancel public events",
    "C4_Restrictions on gatherings",
    "C5_Close public transport",
    "C6_Stay at home requirements",
    "C7_Restrictions on internal movement",
    "C8_International travel controls",
};

/// Stringency levels of the eight containment NPIs on one day.
struct NpiVector {
  std::array<int, kNumNpis> levels{};

  int stringency() const noexcept {
    int total = 0;
    for (int v : levels) total += v;
    return total;
  }

  bool within_bounds() const noexcept {
    for (std::size_t k = 0; k < kNumNpis; ++k) {
      if (levels[k] < 0 || levels[k] > kNpiMax[k]) return false;
    }
    return true;
  }

  /// Elementwise >=.
  bool dominates_or_equals(const NpiVector& other) const noexcept {
    for (std::size_t k = 0; k < kNumNpis; ++k) {
      if (levels[k] < other.levels[k]) return false;
    }
    return true;
  }

  static NpiVector zeros() noexcept { return {}; }
  static NpiVector all_max() noexcept { return NpiVector{kNpiMax}; }

  int& operator[](std::size_t k) { return levels[k]; }
  int operator[](std::size_t k) const { return levels[k]; }

  auto operator<=>(const NpiVector&) const = default;
};

}  // namespace esp
