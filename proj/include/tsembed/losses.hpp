#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "tsembed/data.hpp"
#include "tsembed/errors.hpp"

namespace tsembed {

// ---------------------------------------------------------------------------
// Similarity levels

// K-bit agreement code between two label vectors: bit k is 1 iff the pair
// agrees on label k. Encoded as the string s1s2...sK, e.g. "10" for same
// subject, different class.
struct SimilarityLevel {
  std::vector<std::uint8_t> bits;

  std::string to_string() const {
    std::string s;
    for (auto b : bits) s.push_back(b ? '1' : '0');
    return s;
  }

  static SimilarityLevel from_string(const std::string& s) {
    SimilarityLevel level;
    for (char ch : s) {
      if (ch != '0' && ch != '1')
        throw UsageError("similarity level '" + s + "' must be binary digits");
      level.bits.push_back(ch == '1');
    }
    return level;
  }

  bool operator==(const SimilarityLevel& o) const { return bits == o.bits; }
};

inline SimilarityLevel similarity_level(const LabelVector& la,
                                        const LabelVector& lb) {
  if (la.size() != lb.size())
    throw ShapeMismatch("label vectors have different K");
  SimilarityLevel level;
  level.bits.reserve(la.size());
  for (std::size_t k = 0; k < la.size(); ++k)
    level.bits.push_back(la[k] == lb[k] ? 1 : 0);
  return level;
}

// Product order on levels: s >= t iff every bit of s dominates the
// corresponding bit of t. "10" and "01" are incomparable; the all-ones level
// is the top, the all-zeros level the bottom.
inline bool product_order_geq(const SimilarityLevel& s,
                              const SimilarityLevel& t) {
  if (s.bits.size() != t.bits.size())
    throw ShapeMismatch("levels have different K");
  for (std::size_t k = 0; k < s.bits.size(); ++k)
    if (s.bits[k] < t.bits[k]) return false;
  return true;
}

inline bool product_order_comparable(const SimilarityLevel& s,
                                     const SimilarityLevel& t) {
  return product_order_geq(s, t) || product_order_geq(t, s);
}

// Level selector for a loss component: one digit per label, '1'/'0' require
// agreement/disagreement, 'x' accepts either. A plain level is the pattern
// with no wildcards; wildcards let one component merge several levels (the
// class-only triplet configuration uses "x1" vs "x0").
struct LevelPattern {
  enum Bit : std::int8_t { kZero = 0, kOne = 1, kAny = 2 };
  std::vector<Bit> bits;

  std::string to_string() const {
    std::string s;
    for (auto b : bits) s.push_back(b == kAny ? 'x' : (b == kOne ? '1' : '0'));
    return s;
  }

  static LevelPattern from_string(const std::string& s) {
    LevelPattern p;
    for (char ch : s) {
      switch (ch) {
        case '0': p.bits.push_back(kZero); break;
        case '1': p.bits.push_back(kOne); break;
        case 'x':
        case 'X':
        case '*': p.bits.push_back(kAny); break;
        default:
          throw UsageError("level pattern '" + s + "' may contain only 0/1/x");
      }
    }
    return p;
  }

  static LevelPattern exact(const SimilarityLevel& level) {
    LevelPattern p;
    for (auto b : level.bits) p.bits.push_back(b ? kOne : kZero);
    return p;
  }

  bool matches(const SimilarityLevel& level) const {
    if (bits.size() != level.bits.size()) return false;
    for (std::size_t k = 0; k < bits.size(); ++k) {
      if (bits[k] == kAny) continue;
      if (static_cast<std::uint8_t>(bits[k]) != level.bits[k]) return false;
    }
    return true;
  }

  bool operator==(const LevelPattern& o) const { return bits == o.bits; }
};

// True when some level matches both patterns.
inline bool patterns_overlap(const LevelPattern& a, const LevelPattern& b) {
  if (a.bits.size() != b.bits.size()) return false;
  for (std::size_t k = 0; k < a.bits.size(); ++k) {
    if (a.bits[k] == LevelPattern::kAny || b.bits[k] == LevelPattern::kAny)
      continue;
    if (a.bits[k] != b.bits[k]) return false;
  }
  return true;
}

// Partitions all batch indices except the anchor by similarity level to the
// anchor. Keys are the level codes; every set is non-empty.
inline std::map<std::string, std::vector<int>> level_index_sets(
    int anchor_idx, const std::vector<LabelVector>& batch_labels) {
  const int n = static_cast<int>(batch_labels.size());
  if (anchor_idx < 0 || anchor_idx >= n)
    throw UsageError("anchor index out of range");
  std::map<std::string, std::vector<int>> sets;
  for (int j = 0; j < n; ++j) {
    if (j == anchor_idx) continue;
    sets[similarity_level(batch_labels[anchor_idx], batch_labels[j])
             .to_string()]
        .push_back(j);
  }
  return sets;
}

// ---------------------------------------------------------------------------
// Loss configuration

struct LossComponent {
  double margin = 0.2;
  double weight = 1.0;
  LevelPattern pos_level;
  LevelPattern neg_level;
};

struct LossConfig {
  std::vector<LossComponent> components;
  int K = 2;
  // Off by default: the loss is the plain sum over triplets. When on, the
  // total is divided by the number of margin-violating triplets.
  bool mean_per_active = false;
};

inline void validate_config(const LossConfig& config) {
  if (config.components.empty())
    throw UsageError("loss config needs at least one component");
  if (config.K < 1) throw UsageError("loss config K must be >= 1");
  for (const LossComponent& comp : config.components) {
    if (comp.margin < 0.0 || comp.weight < 0.0)
      throw UsageError("component margins and weights must be >= 0");
    if (static_cast<int>(comp.pos_level.bits.size()) != config.K ||
        static_cast<int>(comp.neg_level.bits.size()) != config.K)
      throw UsageError("component level length differs from config K");
    if (patterns_overlap(comp.pos_level, comp.neg_level))
      throw UsageError("component positive and negative levels must be disjoint");
  }
}

// The four configurations compared in the experiments, all on K=2 labels
// (subject, im_class) with margin 0.2 per component:
//   a  class-only triplet loss ("x1" positives vs "x0" negatives)
//   b  lexicographic order (im_class over subject), class component weight 3
//   c  lexicographic order, equal weights
//   d  product order, four components, equal weights
inline LossConfig builtin_config(const std::string& name, double margin = 0.2) {
  auto comp = [margin](const char* pos, const char* neg, double beta) {
    return LossComponent{margin, beta, LevelPattern::from_string(pos),
                         LevelPattern::from_string(neg)};
  };
  LossConfig config;
  config.K = 2;
  if (name == "a") {
    config.components = {comp("x1", "x0", 1.0)};
  } else if (name == "b") {
    config.components = {comp("11", "01", 1.0), comp("01", "10", 3.0),
                         comp("10", "00", 1.0)};
  } else if (name == "c") {
    config.components = {comp("11", "01", 1.0), comp("01", "10", 1.0),
                         comp("10", "00", 1.0)};
  } else if (name == "d") {
    config.components = {comp("11", "10", 1.0), comp("11", "01", 1.0),
                         comp("10", "00", 1.0), comp("01", "00", 1.0)};
  } else {
    throw UsageError("unknown loss config '" + name + "' (expected a|b|c|d)");
  }
  return config;
}

// ---------------------------------------------------------------------------
// Distances and losses

// Embeddings are kept as an n x d matrix, one row per batch element. All
// distance and loss arithmetic is double precision.
using Embeddings = Eigen::MatrixXd;

inline double euclidean_distance(const Eigen::VectorXd& v1,
                                 const Eigen::VectorXd& v2) {
  if (v1.size() != v2.size())
    throw ShapeMismatch("euclidean_distance: length mismatch");
  return (v1 - v2).norm();
}

struct Triplet {
  int anchor;
  int positive;
  int negative;
  bool operator==(const Triplet& o) const {
    return anchor == o.anchor && positive == o.positive && negative == o.negative;
  }
};

using TripletSet = std::vector<Triplet>;

inline void validate_triplets(const TripletSet& triplets, int n) {
  for (const Triplet& t : triplets) {
    if (t.anchor < 0 || t.anchor >= n || t.positive < 0 || t.positive >= n ||
        t.negative < 0 || t.negative >= n)
      throw UsageError("triplet index out of range");
    if (t.anchor == t.positive || t.anchor == t.negative ||
        t.positive == t.negative)
      throw UsageError("triplet indices must be distinct");
  }
}

// Sum over triplets of max(d(a,p) - d(a,n) + margin, 0).
inline double triplet_loss(const TripletSet& triplets, const Embeddings& V,
                           double margin) {
  validate_triplets(triplets, static_cast<int>(V.rows()));
  double loss = 0.0;
  for (const Triplet& t : triplets) {
    const double d_ap = (V.row(t.anchor) - V.row(t.positive)).norm();
    const double d_an = (V.row(t.anchor) - V.row(t.negative)).norm();
    const double h = d_ap - d_an + margin;
    if (h > 0.0) loss += h;
  }
  return loss;
}

namespace detail {

inline Eigen::MatrixXd pairwise_distances(const Embeddings& V) {
  const Eigen::Index n = V.rows();
  Eigen::MatrixXd D = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double d = (V.row(i) - V.row(j)).norm();
      D(i, j) = d;
      D(j, i) = d;
    }
  return D;
}

// Shared core of the product ladder loss and its gradient. Accumulation
// order is fixed: component, then anchor, then positive, then negative,
// all ascending, so the value is bit-reproducible. When `grad` is non-null
// it receives dLoss/dV. `active_out`, when non-null, receives the number of
// margin-violating triplets.
inline double product_ladder_accumulate(const Embeddings& V,
                                        const std::vector<LabelVector>& labels,
                                        const LossConfig& config,
                                        Eigen::MatrixXd* grad,
                                        std::int64_t* active_out) {
  validate_config(config);
  const int n = static_cast<int>(V.rows());
  if (static_cast<int>(labels.size()) != n)
    throw ShapeMismatch("labels not parallel to embeddings");
  for (const LabelVector& lv : labels)
    if (static_cast<int>(lv.size()) != config.K)
      throw ShapeMismatch("label K differs from loss config K");

  const Eigen::MatrixXd D = pairwise_distances(V);
  if (grad) grad->setZero(V.rows(), V.cols());

  // Level of every ordered pair, computed once.
  std::vector<SimilarityLevel> pair_level(static_cast<std::size_t>(n) * n);
  for (int a = 0; a < n; ++a)
    for (int j = 0; j < n; ++j)
      if (a != j) pair_level[a * n + j] = similarity_level(labels[a], labels[j]);

  double loss = 0.0;
  std::int64_t active = 0;
  for (const LossComponent& comp : config.components) {
    for (int a = 0; a < n; ++a) {
      std::vector<int> pos, neg;
      for (int j = 0; j < n; ++j) {
        if (j == a) continue;
        const SimilarityLevel& level = pair_level[a * n + j];
        if (comp.pos_level.matches(level)) pos.push_back(j);
        if (comp.neg_level.matches(level)) neg.push_back(j);
      }
      for (int p : pos) {
        for (int nn : neg) {
          const double h = D(a, p) - D(a, nn) + comp.margin;
          if (h <= 0.0) continue;
          loss += comp.weight * h;
          ++active;
          if (grad) {
            // d||v_a - v_p|| / dv_a = (v_a - v_p) / d_ap; zero distances
            // contribute no gradient (subgradient 0 at the cusp).
            if (D(a, p) > 0.0) {
              const Eigen::RowVectorXd g =
                  comp.weight * (V.row(a) - V.row(p)) / D(a, p);
              grad->row(a) += g;
              grad->row(p) -= g;
            }
            if (D(a, nn) > 0.0) {
              const Eigen::RowVectorXd g =
                  comp.weight * (V.row(a) - V.row(nn)) / D(a, nn);
              grad->row(a) -= g;
              grad->row(nn) += g;
            }
          }
        }
      }
    }
  }
  if (config.mean_per_active && active > 0) {
    loss /= static_cast<double>(active);
    if (grad) *grad /= static_cast<double>(active);
  }
  if (active_out) *active_out = active;
  return loss;
}

}  // namespace detail

// Weighted sum over components i of the triplet loss with margin alpha_i over
// {a} x A_a^{pos_i} x A_a^{neg_i} for every anchor a. Components whose
// positive or negative set is empty for an anchor contribute nothing there.
inline double product_ladder_loss(const Embeddings& V,
                                  const std::vector<LabelVector>& labels,
                                  const LossConfig& config) {
  return detail::product_ladder_accumulate(V, labels, config, nullptr, nullptr);
}

// Same value plus dLoss/dV, accumulated in the identical order.
inline double product_ladder_loss_grad(const Embeddings& V,
                                       const std::vector<LabelVector>& labels,
                                       const LossConfig& config,
                                       Eigen::MatrixXd& grad_out) {
  return detail::product_ladder_accumulate(V, labels, config, &grad_out,
                                           nullptr);
}

// ---------------------------------------------------------------------------
// Ladder loss (total order on L levels)

struct LadderSpec {
  int levels = 2;                // L
  std::vector<double> margins;   // L-1 entries, margin between level l and l+1
  std::vector<double> weights;   // L-1 entries
};

inline void validate_ladder(const LadderSpec& spec) {
  if (spec.levels < 2) throw UsageError("ladder needs at least 2 levels");
  if (static_cast<int>(spec.margins.size()) != spec.levels - 1 ||
      static_cast<int>(spec.weights.size()) != spec.levels - 1)
    throw UsageError("ladder needs L-1 margins and weights");
}

// levels_per_anchor[a][j] in 1..L gives the similarity level of example j
// relative to anchor a (the diagonal entry is ignored). The loss sums, for
// consecutive levels l, the triplet loss with margin alpha_l over
// {a} x A_a^l x A_a^{l+1}.
inline double ladder_loss(const Embeddings& V,
                          const std::vector<std::vector<int>>& levels_per_anchor,
                          const LadderSpec& spec) {
  validate_ladder(spec);
  const int n = static_cast<int>(V.rows());
  if (static_cast<int>(levels_per_anchor.size()) != n)
    throw ShapeMismatch("levels_per_anchor not parallel to embeddings");
  const Eigen::MatrixXd D = detail::pairwise_distances(V);
  double loss = 0.0;
  for (int l = 1; l <= spec.levels - 1; ++l) {
    const double margin = spec.margins[l - 1];
    const double weight = spec.weights[l - 1];
    for (int a = 0; a < n; ++a) {
      if (static_cast<int>(levels_per_anchor[a].size()) != n)
        throw ShapeMismatch("levels_per_anchor row length differs from batch");
      for (int p = 0; p < n; ++p) {
        if (p == a || levels_per_anchor[a][p] != l) continue;
        for (int q = 0; q < n; ++q) {
          if (q == a || levels_per_anchor[a][q] != l + 1) continue;
          const double h = D(a, p) - D(a, q) + margin;
          if (h > 0.0) loss += weight * h;
        }
      }
    }
  }
  return loss;
}

}  // namespace tsembed
