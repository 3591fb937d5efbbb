#pragma once

// Two-objective NSGA-II building blocks; both objectives are minimised.

#include <array>
#include <span>
#include <vector>

namespace esp {

using Objectives = std::array<double, 2>;  // {mean_cases, mean_stringency}

/// a is no worse in both objectives and strictly better in one.
bool dominates(const Objectives& a, const Objectives& b) noexcept;

/// Fast nondominated sort; fronts hold indices into `points`, front 0 first,
/// each front in ascending index order.
std::vector<std::vector<std::size_t>> nondominated_sort(std::span<const Objectives> points);

/// Crowding distance of each member of `front` (indices into `points`),
/// returned in the order of `front`.
std::vector<double> crowding_distance(std::span<const Objectives> points,
                                      std::span<const std::size_t> front);

/// Area dominated by `points` and bounded by `reference`; points not strictly
/// better than the reference in both objectives contribute nothing.
double hypervolume_2d(std::span<const Objectives> points, const Objectives& reference);

}  // namespace esp
