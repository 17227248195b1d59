#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "tsembed/errors.hpp"
#include "tsembed/rng.hpp"

namespace tsembed {

enum class Split { kTrain, kTest };

// One multichannel recording segment: a time_steps x channels matrix of
// amplitudes plus identity and chronological position within its subject.
// Samples are held in double but every value produced by the generator or
// the loader is exactly representable in IEEE float32, matching the on-disk
// format.
struct Trial {
  Eigen::MatrixXd samples;  // time_steps x channels
  std::int64_t trial_id = 0;
  std::int64_t order_index = 0;

  Eigen::Index time_steps() const { return samples.rows(); }
  Eigen::Index channels() const { return samples.cols(); }
};

// K label values per trial; index 0 is `subject`, index 1 is `im_class`.
using LabelVector = std::vector<int>;

struct Dataset {
  std::vector<Trial> trials;
  std::vector<LabelVector> labels;  // parallel to trials
  std::vector<Split> split;         // parallel to trials
  std::vector<std::string> label_names;
  std::vector<int> label_cardinalities;

  std::size_t size() const { return trials.size(); }
  int n_labels() const { return static_cast<int>(label_names.size()); }

  int subject_of(std::size_t i) const { return labels[i][0]; }
  int class_of(std::size_t i) const { return labels[i][1]; }
};

inline void validate_dataset(const Dataset& ds) {
  const std::size_t n = ds.trials.size();
  if (n == 0) throw FormatError("dataset is empty");
  if (ds.labels.size() != n || ds.split.size() != n)
    throw FormatError("trials/labels/split lengths disagree");
  if (ds.label_names.size() != ds.label_cardinalities.size() ||
      ds.label_names.empty())
    throw FormatError("label_names/label_cardinalities malformed");
  const Eigen::Index t = ds.trials[0].time_steps();
  const Eigen::Index c = ds.trials[0].channels();
  if (t < 1 || c < 1) throw ShapeMismatch("trial shape must be >= 1x1");
  std::vector<std::int64_t> ids;
  ids.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Trial& tr = ds.trials[i];
    if (tr.time_steps() != t || tr.channels() != c)
      throw ShapeMismatch("trial " + std::to_string(tr.trial_id) +
                          " shape differs from the dataset shape");
    if (!tr.samples.allFinite())
      throw FormatError("trial " + std::to_string(tr.trial_id) +
                        " contains non-finite samples");
    if (tr.trial_id < 0 || tr.order_index < 0)
      throw FormatError("negative trial_id or order_index");
    ids.push_back(tr.trial_id);
    if (ds.labels[i].size() != ds.label_names.size())
      throw FormatError("label vector length differs from declared K");
    for (std::size_t k = 0; k < ds.labels[i].size(); ++k) {
      if (ds.labels[i][k] < 0 || ds.labels[i][k] >= ds.label_cardinalities[k])
        throw FormatError("label value out of declared cardinality");
    }
  }
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end())
    throw FormatError("duplicate trial_id");
  std::map<int, std::pair<bool, bool>> groups;  // subject -> (train, test)
  for (std::size_t i = 0; i < n; ++i) {
    auto& g = groups[ds.labels[i][0]];
    (ds.split[i] == Split::kTrain ? g.first : g.second) = true;
  }
  for (const auto& [subject, g] : groups)
    if (!g.first || !g.second)
      throw FormatError("subject " + std::to_string(subject) + " lacks a " +
                        (g.first ? "TEST" : "TRAIN") + " split");
}

// ---------------------------------------------------------------------------
// Preprocessing

// Removes the scalar mean over all time_steps x channels entries.
inline Trial baseline_correct(const Trial& trial) {
  Trial out = trial;
  out.samples.array() -= trial.samples.mean();
  return out;
}

// Per-channel variant: removes each channel's own temporal mean.
inline Trial baseline_correct_per_channel(const Trial& trial) {
  Trial out = trial;
  out.samples.rowwise() -= trial.samples.colwise().mean();
  return out;
}

inline void baseline_correct_inplace(Dataset& ds, bool per_channel = false) {
  for (Trial& tr : ds.trials)
    tr = per_channel ? baseline_correct_per_channel(tr) : baseline_correct(tr);
}

// Population standard deviation (about the mean) of all TRAIN samples.
inline double train_sample_sd(const Dataset& ds) {
  long double sum = 0.0L, sumsq = 0.0L;
  std::int64_t count = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (ds.split[i] != Split::kTrain) continue;
    const Eigen::MatrixXd& m = ds.trials[i].samples;
    sum += static_cast<long double>(m.sum());
    sumsq += static_cast<long double>(m.array().square().sum());
    count += static_cast<std::int64_t>(m.size());
  }
  if (count == 0) throw DegenerateData("dataset has no TRAIN samples");
  const long double mean = sum / count;
  long double var = sumsq / count - mean * mean;
  if (var < 0.0L) var = 0.0L;
  return static_cast<double>(std::sqrt(var));
}

// Divides every trial (TRAIN and TEST alike) by the TRAIN-derived scale.
inline std::pair<Dataset, double> standardize(const Dataset& dataset) {
  if (dataset.size() == 0) throw DegenerateData("cannot standardize an empty dataset");
  const double scale = train_sample_sd(dataset);
  if (scale < 1e-12)
    throw DegenerateData("TRAIN standard deviation below 1e-12");
  Dataset out = dataset;
  for (Trial& tr : out.trials) tr.samples /= scale;
  return {std::move(out), scale};
}

// ---------------------------------------------------------------------------
// Synthetic generator

struct SyntheticSpec {
  int n_subjects = 2;
  int n_classes = 2;
  int trials_per_cell_train = 3;
  int trials_per_cell_test = 1;
  int time_steps = 32;
  int channels = 4;
  double class_separation = 1.0;
  double subject_separation = 1.0;
  double noise_sd = 0.5;
  std::uint64_t seed = 0;
};

inline void validate_spec(const SyntheticSpec& s) {
  if (s.n_subjects < 1 || s.n_classes < 1 || s.trials_per_cell_train < 1 ||
      s.trials_per_cell_test < 1 || s.time_steps < 1 || s.channels < 1)
    throw UsageError("synthetic spec counts must all be >= 1");
  if (!(s.class_separation > 0.0) || !(s.subject_separation > 0.0) ||
      !(s.noise_sd > 0.0))
    throw UsageError("synthetic spec separations and noise_sd must be > 0");
}

namespace detail {

// Seed tags for the generator's sub-streams.
inline constexpr std::uint64_t kSubjectTemplateTag = 0x5B7Eu;
inline constexpr std::uint64_t kClassTemplateTag = 0xC1A5u;
inline constexpr std::uint64_t kNoiseTag = 0x9015Eu;

// Unit-Frobenius-norm matrix whose entries come from the given stream.
// Independent Gaussian matrices of this size are nearly orthogonal, which is
// all the generator needs from its subject/class directions.
inline Eigen::MatrixXd unit_template(std::uint64_t seed, int rows, int cols) {
  RngStream rng(seed);
  Eigen::MatrixXd m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = rng.normal();
  const double norm = m.norm();
  if (norm > 0.0) m /= norm;
  return m;
}

inline double round_to_float32(double x) {
  return static_cast<double>(static_cast<float>(x));
}

}  // namespace detail

// Builds n_subjects x n_classes cells. Each cell's trials are the cell
// template subject_separation * u_s + class_separation * v_c plus i.i.d.
// Gaussian noise. Templates depend only on the subject/class index, so two
// specs differing only in seed share the same geometry and differ in noise.
//
// Deterministic generation order: subject-major, then class, TRAIN before
// TEST, then trial, then samples row-major (time, then channel). order_index
// counts 0,1,2,... per subject in that order, so TRAIN order_index values are
// consecutive from 0. Every sample is rounded to float32 precision so that a
// save/load cycle through the on-disk container is exact.
inline Dataset generate_synthetic(const SyntheticSpec& spec) {
  validate_spec(spec);
  Dataset ds;
  ds.label_names = {"subject", "im_class"};
  ds.label_cardinalities = {spec.n_subjects, spec.n_classes};
  RngStream noise(derive_seed(spec.seed, detail::kNoiseTag));

  std::vector<Eigen::MatrixXd> subj_templates(spec.n_subjects);
  for (int s = 0; s < spec.n_subjects; ++s)
    subj_templates[s] =
        spec.subject_separation *
        detail::unit_template(derive_seed(detail::kSubjectTemplateTag, s),
                              spec.time_steps, spec.channels);
  std::vector<Eigen::MatrixXd> class_templates(spec.n_classes);
  for (int c = 0; c < spec.n_classes; ++c)
    class_templates[c] =
        spec.class_separation *
        detail::unit_template(derive_seed(detail::kClassTemplateTag, c),
                              spec.time_steps, spec.channels);

  std::int64_t next_id = 0;
  for (int s = 0; s < spec.n_subjects; ++s) {
    std::int64_t order = 0;
    for (int phase = 0; phase < 2; ++phase) {
      const Split sp = phase == 0 ? Split::kTrain : Split::kTest;
      const int per_cell =
          phase == 0 ? spec.trials_per_cell_train : spec.trials_per_cell_test;
      for (int c = 0; c < spec.n_classes; ++c) {
        const Eigen::MatrixXd mean = subj_templates[s] + class_templates[c];
        for (int i = 0; i < per_cell; ++i) {
          Trial tr;
          tr.trial_id = next_id++;
          tr.order_index = order++;
          tr.samples.resize(spec.time_steps, spec.channels);
          for (int t = 0; t < spec.time_steps; ++t)
            for (int ch = 0; ch < spec.channels; ++ch)
              tr.samples(t, ch) = detail::round_to_float32(
                  mean(t, ch) + spec.noise_sd * noise.normal());
          ds.trials.push_back(std::move(tr));
          ds.labels.push_back({s, c});
          ds.split.push_back(sp);
        }
      }
    }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Views

// Copies the trials selected by `keep` (by dataset index) into a new dataset.
// Label names and cardinalities are preserved; trial ids and order indices
// are kept as-is, so chronological truncation still works on the subset.
template <typename Pred>
Dataset subset(const Dataset& ds, Pred keep) {
  Dataset out;
  out.label_names = ds.label_names;
  out.label_cardinalities = ds.label_cardinalities;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (!keep(i)) continue;
    out.trials.push_back(ds.trials[i]);
    out.labels.push_back(ds.labels[i]);
    out.split.push_back(ds.split[i]);
  }
  return out;
}

inline std::vector<int> subjects_in(const Dataset& ds) {
  std::vector<int> subjects;
  for (std::size_t i = 0; i < ds.size(); ++i) subjects.push_back(ds.subject_of(i));
  std::sort(subjects.begin(), subjects.end());
  subjects.erase(std::unique(subjects.begin(), subjects.end()), subjects.end());
  return subjects;
}

}  // namespace tsembed
