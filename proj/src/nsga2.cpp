#include "esp/nsga2.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

namespace esp {

bool dominates(const Objectives& a, const Objectives& b) noexcept {
  return a[0] <= b[0] && a[1] <= b[1] && (a[0] < b[0] || a[1] < b[1]);
}

std::vector<std::vector<std::size_t>> nondominated_sort(std::span<const Objectives> p) {
  const auto n = p.size();
  std::vector<std::vector<std::size_t>> dominated(n);
  std::vector<int> count(n, 0);
  std::vector<std::vector<std::size_t>> fronts(1);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      if (dominates(p[i], p[j])) {
        dominated[i].push_back(j);
      } else if (dominates(p[j], p[i])) {
        ++count[i];
      }
    }
    if (count[i] == 0) fronts[0].push_back(i);
  }
  if (fronts[0].empty()) return {};
  for (std::size_t f = 0; !fronts[f].empty(); ++f) {
    std::vector<std::size_t> next;
    for (auto i : fronts[f]) {
      for (auto j : dominated[i]) {
        if (--count[j] == 0) next.push_back(j);
      }
    }
    std::sort(next.begin(), next.end());
    if (next.empty()) break;
    fronts.push_back(std::move(next));
  }
  return fronts;
}

std::vector<double> crowding_distance(std::span<const Objectives> p,
                                      std::span<const std::size_t> front) {
  const auto m = front.size();
  std::vector<double> d(m, 0.0);
  if (m <= 2) {
    std::fill(d.begin(), d.end(), std::numeric_limits<double>::infinity());
    return d;
  }
  std::vector<std::size_t> order(m);
  for (int obj = 0; obj < 2; ++obj) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return p[front[a]][obj] < p[front[b]][obj];
    });
    const double lo = p[front[order.front()]][obj];
    const double hi = p[front[order.back()]][obj];
    d[order.front()] = std::numeric_limits<double>::infinity();
    d[order.back()] = std::numeric_limits<double>::infinity();
    if (!(hi > lo)) continue;
    for (std::size_t k = 1; k + 1 < m; ++k) {
      d[order[k]] += (p[front[order[k + 1]]][obj] - p[front[order[k - 1]]][obj]) / (hi - lo);
    }
  }
  return d;
}

double hypervolume_2d(std::span<const Objectives> points, const Objectives& ref) {
  std::vector<Objectives> pts;
  for (const auto& q : points) {
    if (q[0] < ref[0] && q[1] < ref[1]) pts.push_back(q);
  }
  std::sort(pts.begin(), pts.end());
  double area = 0.0;
  double best_y = ref[1];
  for (const auto& q : pts) {
    if (q[1] < best_y) {
      area += (ref[0] - q[0]) * (best_y - q[1]);
      best_y = q[1];
    }
  }
  return area;
}

}  // namespace esp
