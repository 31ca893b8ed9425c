#pragma once

// Two-cluster 1-D Lloyd binning of safety scores.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "roadsafe/error.hpp"
#include "roadsafe/geo.hpp"

namespace roadsafe {

struct LabelingConfig {
  std::size_t k = 2;
  std::size_t max_iterations = 100;
  std::uint64_t seed = 0;  // unused by the deterministic min/max init
};

struct KMeansResult {
  std::vector<int> assignments;  // 0 = low-centroid (safe), 1 = high-centroid (dangerous)
  double low_centroid = 0.0;
  double high_centroid = 0.0;
  std::size_t iterations = 0;
  bool degenerate = false;
  std::vector<std::string> warnings;
};

namespace detail {

// Lloyd iterations from the given centroids; equidistant points go low.
inline void lloyd_1d(std::span<const double> scores, double lo, double hi,
                     std::size_t max_iterations, KMeansResult& out) {
  out.assignments.assign(scores.size(), 0);
  out.iterations = 0;
  for (std::size_t it = 0; it < max_iterations; ++it) {
    bool changed = it == 0;
    double sum_lo = 0, sum_hi = 0;
    std::size_t n_lo = 0, n_hi = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      const int a = std::abs(scores[i] - lo) <= std::abs(scores[i] - hi) ? 0 : 1;
      changed = changed || a != out.assignments[i];
      out.assignments[i] = a;
      (a == 0 ? sum_lo : sum_hi) += scores[i];
      (a == 0 ? n_lo : n_hi) += 1;
    }
    if (n_lo) lo = sum_lo / static_cast<double>(n_lo);
    if (n_hi) hi = sum_hi / static_cast<double>(n_hi);
    out.iterations = it + 1;
    if (!changed) break;
  }
  out.low_centroid = lo;
  out.high_centroid = hi;
}

inline double within_cluster_ss(std::span<const double> scores, const std::vector<int>& assign) {
  double sum[2] = {0, 0}, sq[2] = {0, 0};
  std::size_t n[2] = {0, 0};
  for (std::size_t i = 0; i < scores.size(); ++i) {
    sum[assign[i]] += scores[i];
    sq[assign[i]] += scores[i] * scores[i];
    n[assign[i]] += 1;
  }
  double total = 0;
  for (int c : {0, 1})
    if (n[c]) total += sq[c] - sum[c] * sum[c] / static_cast<double>(n[c]);
  return total;
}

}  // namespace detail

/// Two-cluster binning. Lloyd iterations start from centroids (min, max);
/// a point equidistant from both centroids goes to the lower one. Lloyd can
/// stall in a local optimum on heavy-tailed counts, so the result is then
/// compared with the best split over sorted distinct values (prefix sums) and,
/// if that is strictly better, Lloyd is restarted from its centroids. The
/// returned partition is therefore a global 2-means optimum. All-equal input
/// labels everything safe and raises a warning.
inline KMeansResult kmeans_bin(std::span<const double> scores,
                               const LabelingConfig& config = {}) {
  if (config.k != 2) throw ConfigError("kmeans_bin: only k = 2 is supported");
  if (scores.empty()) throw DataError("kmeans_bin: no scores");
  KMeansResult out;
  const auto [lo_it, hi_it] = std::minmax_element(scores.begin(), scores.end());
  if (*lo_it == *hi_it) {
    out.assignments.assign(scores.size(), 0);
    out.degenerate = true;
    out.low_centroid = out.high_centroid = *lo_it;
    out.warnings.push_back("kmeans_bin: all scores identical; every cell labeled safe");
    return out;
  }
  detail::lloyd_1d(scores, *lo_it, *hi_it, config.max_iterations, out);
  const double lloyd_cost = detail::within_cluster_ss(scores, out.assignments);

  std::vector<double> sorted(scores.begin(), scores.end());
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  std::vector<double> prefix(n + 1, 0.0), prefix_sq(n + 1, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    prefix[i + 1] = prefix[i] + sorted[i];
    prefix_sq[i + 1] = prefix_sq[i] + sorted[i] * sorted[i];
  }
  double best_cost = INFINITY, best_lo = 0, best_hi = 0;
  for (std::size_t m = 1; m < n; ++m) {  // low cluster = sorted[0, m)
    if (sorted[m] == sorted[m - 1]) continue;
    const double nl = static_cast<double>(m), nh = static_cast<double>(n - m);
    const double sl = prefix[m], sh = prefix[n] - prefix[m];
    const double cost = (prefix_sq[m] - sl * sl / nl) + (prefix_sq[n] - prefix_sq[m] - sh * sh / nh);
    if (cost < best_cost) {
      best_cost = cost;
      best_lo = sl / nl;
      best_hi = sh / nh;
    }
  }
  if (best_cost < lloyd_cost - 1e-9 * std::max(1.0, lloyd_cost)) {
    detail::lloyd_1d(scores, best_lo, best_hi, config.max_iterations, out);
    out.warnings.push_back("kmeans_bin: min/max Lloyd start was a local optimum; restarted");
  }
  return out;
}

inline KMeansResult kmeans_bin(const std::vector<std::uint64_t>& scores,
                               const LabelingConfig& config = {}) {
  std::vector<double> v(scores.begin(), scores.end());
  return kmeans_bin(std::span<const double>(v), config);
}

/// Labels every cell from its binned safety score.
inline KMeansResult label_cells(std::vector<Cell>& cells, const LabelingConfig& config = {}) {
  std::vector<std::uint64_t> scores;
  scores.reserve(cells.size());
  for (const auto& c : cells) scores.push_back(c.safety_score);
  auto result = kmeans_bin(scores, config);
  for (std::size_t i = 0; i < cells.size(); ++i) {
    cells[i].label = result.assignments[i] == 1 ? SafetyLabel::dangerous : SafetyLabel::safe;
  }
  return result;
}

}  // namespace roadsafe
