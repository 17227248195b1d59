#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "tsembed/errors.hpp"

namespace tsembed {

struct StatResult {
  double statistic_w = 0.0;  // min(W+, W-)
  double p_value = 1.0;      // two-sided
  int n_effective = 0;       // pairs left after dropping zero differences
};

namespace detail {

// Average ranks of |values|, ties sharing the mean of their rank range.
inline std::vector<double> abs_ranks(const std::vector<double>& values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&values](std::size_t i, std::size_t j) {
    return std::fabs(values[i]) < std::fabs(values[j]);
  });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n &&
           std::fabs(values[order[j + 1]]) == std::fabs(values[order[i]]))
      ++j;
    const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

}  // namespace detail

// Wilcoxon signed-rank test, two-sided. Zero differences are dropped; tied
// absolute differences get average ranks. For n <= 25 the p-value is exact:
// the null distribution of W+ over all 2^n sign assignments of the observed
// ranks is built by dynamic programming (ranks doubled to stay integral) and
// p = P(min(W+, W-) <= observed). Above 25 pairs the normal approximation
// with tie correction is used.
inline StatResult wilcoxon_signed_rank(const std::vector<double>& a,
                                       const std::vector<double>& b) {
  if (a.size() != b.size())
    throw ShapeMismatch("wilcoxon needs paired samples of equal length");
  std::vector<double> diffs;
  diffs.reserve(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    if (d != 0.0) diffs.push_back(d);
  }
  if (diffs.empty())
    throw AllZeroDifferences("all paired differences are zero");

  const int n = static_cast<int>(diffs.size());
  const std::vector<double> ranks = detail::abs_ranks(diffs);
  double w_plus = 0.0, w_minus = 0.0;
  for (int i = 0; i < n; ++i)
    (diffs[i] > 0.0 ? w_plus : w_minus) += ranks[i];
  const double w = std::min(w_plus, w_minus);

  StatResult result;
  result.statistic_w = w;
  result.n_effective = n;

  if (n <= 25) {
    // Doubled ranks are integers even with .5 average ranks.
    std::vector<std::int64_t> scaled(ranks.size());
    std::int64_t total = 0;
    for (std::size_t i = 0; i < ranks.size(); ++i) {
      scaled[i] = std::llround(2.0 * ranks[i]);
      total += scaled[i];
    }
    std::vector<std::uint64_t> ways(static_cast<std::size_t>(total) + 1, 0);
    ways[0] = 1;
    for (const std::int64_t r : scaled)
      for (std::int64_t s = total; s >= r; --s) ways[s] += ways[s - r];
    const std::int64_t w_scaled = std::llround(2.0 * w);
    std::uint64_t favorable = 0;
    for (std::int64_t s = 0; s <= total; ++s)
      if (std::min(s, total - s) <= w_scaled) favorable += ways[s];
    result.p_value =
        static_cast<double>(favorable) / std::ldexp(1.0, n);  // / 2^n
  } else {
    const double mean = static_cast<double>(n) * (n + 1) / 4.0;
    double tie_term = 0.0;
    {
      std::vector<double> sorted(diffs.size());
      for (std::size_t i = 0; i < diffs.size(); ++i)
        sorted[i] = std::fabs(diffs[i]);
      std::sort(sorted.begin(), sorted.end());
      std::size_t i = 0;
      while (i < sorted.size()) {
        std::size_t j = i;
        while (j + 1 < sorted.size() && sorted[j + 1] == sorted[i]) ++j;
        const double t = static_cast<double>(j - i + 1);
        tie_term += t * t * t - t;
        i = j + 1;
      }
    }
    const double var =
        static_cast<double>(n) * (n + 1) * (2 * n + 1) / 24.0 - tie_term / 48.0;
    const double z = (w - mean) / std::sqrt(var);
    result.p_value = std::min(1.0, 2.0 * detail::normal_cdf(z));
  }
  return result;
}

// Holm-Bonferroni step-down: sort p ascending, reject the i-th smallest
// (1-indexed) while p_(i) <= alpha / (m - i + 1), stop at the first failure.
// Decisions are returned in the original order.
inline std::vector<bool> holm_bonferroni(const std::vector<double>& p_values,
                                         double alpha = 0.05) {
  for (const double p : p_values)
    if (!(p > 0.0) || p > 1.0)
      throw UsageError("p-values must lie in (0, 1]");
  const std::size_t m = p_values.size();
  std::vector<bool> reject(m, false);
  if (m == 0) return reject;

  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&p_values](std::size_t i, std::size_t j) {
              return p_values[i] < p_values[j];
            });
  for (std::size_t k = 0; k < m; ++k) {
    const double threshold = alpha / static_cast<double>(m - k);
    if (p_values[order[k]] <= threshold)
      reject[order[k]] = true;
    else
      break;
  }
  return reject;
}

}  // namespace tsembed
