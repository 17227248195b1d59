#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "tsembed/data.hpp"
#include "tsembed/errors.hpp"
#include "tsembed/losses.hpp"
#include "tsembed/rng.hpp"

namespace tsembed {

// Online triplet selection: balanced batches over label combinations, then
// exhaustive in-batch triplet enumeration per loss component. No hard-triplet
// mining; the hinge discards satisfied triplets on its own.

struct BatchSpec {
  int batch_size = 32;
  // Label value tuples to sample from; empty means every combination present
  // in the TRAIN split.
  std::vector<LabelVector> allowed_combinations;
  std::uint64_t stream_id = 0;
};

struct Batch {
  std::vector<int> indices;         // into the dataset
  std::vector<LabelVector> labels;  // parallel to indices
};

// Draws a balanced batch: exactly batch_size / n_combinations examples per
// combination, uniform within each combination. Sampling is without
// replacement when a combination has enough TRAIN trials, with replacement
// otherwise. Combinations are visited in sorted order and the rng state is
// threaded explicitly, so identical states give identical batches.
inline Batch sample_batch(const Dataset& dataset, const BatchSpec& spec,
                          RngStream& rng) {
  if (spec.batch_size < 1) throw UsageError("batch_size must be >= 1");

  std::map<LabelVector, std::vector<int>> train_by_combo;
  for (std::size_t i = 0; i < dataset.size(); ++i)
    if (dataset.split[i] == Split::kTrain)
      train_by_combo[dataset.labels[i]].push_back(static_cast<int>(i));

  std::vector<LabelVector> combos = spec.allowed_combinations;
  if (combos.empty()) {
    for (const auto& [combo, unused] : train_by_combo) combos.push_back(combo);
  } else {
    std::sort(combos.begin(), combos.end());
    combos.erase(std::unique(combos.begin(), combos.end()), combos.end());
  }
  if (combos.empty()) throw EmptyCombination("TRAIN split is empty");
  for (const LabelVector& combo : combos) {
    auto it = train_by_combo.find(combo);
    if (it == train_by_combo.end() || it->second.empty()) {
      std::string repr;
      for (std::size_t k = 0; k < combo.size(); ++k)
        repr += (k ? "," : "") + std::to_string(combo[k]);
      throw EmptyCombination("label combination (" + repr +
                             ") has no TRAIN trials");
    }
  }
  if (spec.batch_size % static_cast<int>(combos.size()) != 0)
    throw UsageError("batch_size " + std::to_string(spec.batch_size) +
                     " is not divisible by the " +
                     std::to_string(combos.size()) + " label combinations");
  const int quota = spec.batch_size / static_cast<int>(combos.size());

  Batch batch;
  batch.indices.reserve(spec.batch_size);
  for (const LabelVector& combo : combos) {
    const std::vector<int>& pool = train_by_combo[combo];
    if (static_cast<int>(pool.size()) >= quota) {
      // Partial Fisher-Yates: first `quota` positions of a shuffled copy.
      std::vector<int> work = pool;
      for (int k = 0; k < quota; ++k) {
        const std::uint64_t j =
            k + rng.uniform_index(static_cast<std::uint64_t>(work.size() - k));
        std::swap(work[k], work[j]);
        batch.indices.push_back(work[k]);
      }
    } else {
      for (int k = 0; k < quota; ++k)
        batch.indices.push_back(
            pool[rng.uniform_index(static_cast<std::uint64_t>(pool.size()))]);
    }
  }
  batch.labels.reserve(batch.indices.size());
  for (int idx : batch.indices) batch.labels.push_back(dataset.labels[idx]);
  return batch;
}

// All (a, p, n) whose anchor-positive pair sits at the component's positive
// level and anchor-negative pair at its negative level, sorted ascending by
// (a, p, n). |T| equals the sum over anchors of |A_a^pos| * |A_a^neg|.
inline TripletSet enumerate_component_triplets(
    const std::vector<LabelVector>& batch_labels, const LossComponent& comp) {
  const int n = static_cast<int>(batch_labels.size());
  TripletSet triplets;
  for (int a = 0; a < n; ++a) {
    std::vector<int> pos, neg;
    for (int j = 0; j < n; ++j) {
      if (j == a) continue;
      const SimilarityLevel level =
          similarity_level(batch_labels[a], batch_labels[j]);
      if (comp.pos_level.matches(level)) pos.push_back(j);
      if (comp.neg_level.matches(level)) neg.push_back(j);
    }
    for (int p : pos)
      for (int q : neg) triplets.push_back(Triplet{a, p, q});
  }
  return triplets;
}

}  // namespace tsembed
