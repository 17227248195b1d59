#pragma once

// Independent reference implementations used only by tests. They avoid the
// library's loss/stat code paths on purpose: values are recomputed from raw
// loops so the main implementations can be checked against them.

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <vector>

#include "tsembed/losses.hpp"

namespace oracle {

inline double dist(const Eigen::MatrixXd& V, int i, int j) {
  double acc = 0.0;
  for (Eigen::Index k = 0; k < V.cols(); ++k) {
    const double diff = V(i, k) - V(j, k);
    acc += diff * diff;
  }
  return std::sqrt(acc);
}

inline bool pattern_matches(const tsembed::LevelPattern& pat,
                            const std::vector<int>& la,
                            const std::vector<int>& lb) {
  for (std::size_t k = 0; k < pat.bits.size(); ++k) {
    if (pat.bits[k] == tsembed::LevelPattern::kAny) continue;
    const bool agree = la[k] == lb[k];
    if ((pat.bits[k] == tsembed::LevelPattern::kOne) != agree) return false;
  }
  return true;
}

// Exhaustive enumeration of all ordered (a, p, n) triples per component.
inline double brute_force_product_ladder(
    const Eigen::MatrixXd& V, const std::vector<std::vector<int>>& labels,
    const tsembed::LossConfig& config) {
  const int n = static_cast<int>(V.rows());
  double total = 0.0;
  std::int64_t active = 0;
  for (const tsembed::LossComponent& comp : config.components) {
    for (int a = 0; a < n; ++a)
      for (int p = 0; p < n; ++p) {
        if (p == a) continue;
        if (!pattern_matches(comp.pos_level, labels[a], labels[p])) continue;
        for (int q = 0; q < n; ++q) {
          if (q == a || q == p) continue;
          if (!pattern_matches(comp.neg_level, labels[a], labels[q])) continue;
          const double h = dist(V, a, p) - dist(V, a, q) + comp.margin;
          if (h > 0.0) {
            total += comp.weight * h;
            ++active;
          }
        }
      }
  }
  if (config.mean_per_active && active > 0)
    total /= static_cast<double>(active);
  return total;
}

// Exact two-sided Wilcoxon p by enumerating all 2^n sign assignments.
inline double wilcoxon_exact_p_enumeration(const std::vector<double>& diffs) {
  const int n = static_cast<int>(diffs.size());
  // Average ranks of |d|, computed from scratch.
  std::vector<double> ranks(n, 0.0);
  for (int i = 0; i < n; ++i) {
    int below = 0, equal = 0;
    for (int j = 0; j < n; ++j) {
      const double ai = std::fabs(diffs[i]), aj = std::fabs(diffs[j]);
      if (aj < ai) ++below;
      if (aj == ai) ++equal;
    }
    ranks[i] = below + (equal + 1) / 2.0;
  }
  double w_plus = 0.0, w_minus = 0.0;
  for (int i = 0; i < n; ++i) (diffs[i] > 0.0 ? w_plus : w_minus) += ranks[i];
  const double w_obs = std::min(w_plus, w_minus);

  std::uint64_t favorable = 0;
  const std::uint64_t assignments = 1ULL << n;
  double total = 0.0;
  for (int i = 0; i < n; ++i) total += ranks[i];
  for (std::uint64_t mask = 0; mask < assignments; ++mask) {
    double wp = 0.0;
    for (int i = 0; i < n; ++i)
      if (mask & (1ULL << i)) wp += ranks[i];
    if (std::min(wp, total - wp) <= w_obs + 1e-12) ++favorable;
  }
  return static_cast<double>(favorable) / static_cast<double>(assignments);
}

// Literal Holm step-down applied by hand.
inline std::vector<bool> holm_by_hand(const std::vector<double>& p,
                                      double alpha) {
  const int m = static_cast<int>(p.size());
  std::vector<int> order(m);
  for (int i = 0; i < m; ++i) order[i] = i;
  for (int i = 0; i < m; ++i)
    for (int j = i + 1; j < m; ++j)
      if (p[order[j]] < p[order[i]]) std::swap(order[i], order[j]);
  std::vector<bool> reject(m, false);
  for (int i = 0; i < m; ++i) {
    if (p[order[i]] <= alpha / (m - i))
      reject[order[i]] = true;
    else
      break;
  }
  return reject;
}

}  // namespace oracle
