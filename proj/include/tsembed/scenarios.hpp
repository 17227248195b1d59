#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <future>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "tsembed/classify.hpp"
#include "tsembed/data.hpp"
#include "tsembed/embedder.hpp"
#include "tsembed/errors.hpp"
#include "tsembed/train.hpp"

namespace tsembed {

// Evaluation protocols. Every run scores the held-out (or only) subject's
// predefined TEST split:
//
//   WITHIN_SUBJECT  embedder and classifier trained on one subject's TRAIN.
//                   The loss is forced to the class-only configuration (a):
//                   with a single subject the cross-subject components have
//                   nothing to compare.
//   COMPLETE_LOSO   embedder and classifier trained on the TRAIN split of
//                   every other subject. The held-out subject's data never
//                   touches training in any form; input standardization is
//                   computed inside the fold for the same reason.
//   PARTIAL_LOSO    embedder as in complete LOSO; the classifier is fit on
//                   the held-out subject's own embedded TRAIN trials,
//                   optionally truncated to the m chronologically-first
//                   trials per class (ascending order_index).

enum class Scenario { kWithinSubject, kCompleteLoso, kPartialLoso };
enum class ClassifierKind { kLogReg, kOneNn };

struct ScenarioSpec {
  Scenario scenario = Scenario::kWithinSubject;
  std::string config_name = "a";  // informational; train.loss_config decides
  ClassifierKind classifier = ClassifierKind::kLogReg;
  TrainSpec train;
  std::uint64_t seed = 0;
  bool standardize = true;
  std::optional<int> samples_per_class;  // partial LOSO calibration cut
  int jobs = 1;
  double logreg_C = 1.0;
  int logreg_max_iter = 100;
};

struct SubjectScore {
  int subject = 0;
  double accuracy = 0.0;
  ConfusionMatrix confusion;
  int n_train_calibration = 0;
};

struct CurvePoint {
  int samples_per_class = 0;
  double mean_accuracy = 0.0;
  double standard_error = 0.0;  // sample sd / sqrt(n_subjects)
};

namespace detail {

inline std::vector<int> class_list_of(const Dataset& ds) {
  std::vector<int> classes(static_cast<std::size_t>(ds.label_cardinalities[1]));
  for (std::size_t c = 0; c < classes.size(); ++c) classes[c] = static_cast<int>(c);
  return classes;
}

// Largest multiple of n_combos that fits the requested batch size (at least
// one example per combination).
inline int fit_batch_size(int requested, int n_combos) {
  if (requested < n_combos) return n_combos;
  return (requested / n_combos) * n_combos;
}

inline int count_train_combos(const Dataset& ds, const BatchSpec& spec) {
  if (!spec.allowed_combinations.empty()) {
    std::vector<LabelVector> combos = spec.allowed_combinations;
    std::sort(combos.begin(), combos.end());
    combos.erase(std::unique(combos.begin(), combos.end()), combos.end());
    return static_cast<int>(combos.size());
  }
  std::map<LabelVector, int> seen;
  for (std::size_t i = 0; i < ds.size(); ++i)
    if (ds.split[i] == Split::kTrain) seen[ds.labels[i]] += 1;
  return static_cast<int>(seen.size());
}

struct FoldEmbedder {
  EmbedderParams params;
  double scale = 1.0;
};

// Trains the embedding function on `fold` (its TRAIN split) with a seed
// derived from (seed, subject). Standardization, when enabled, uses only the
// fold's TRAIN samples.
inline FoldEmbedder train_fold_embedder(const Dataset& fold,
                                        const ScenarioSpec& spec,
                                        const LossConfig& config, int subject) {
  FoldEmbedder out;
  Dataset scaled = fold;
  if (spec.standardize) {
    auto [ds, scale] = standardize(fold);
    scaled = std::move(ds);
    out.scale = scale;
  }
  TrainSpec tspec = spec.train;
  tspec.loss_config = config;
  tspec.seed = derive_seed(spec.seed, static_cast<std::uint64_t>(subject));
  tspec.architecture.time_steps = static_cast<int>(scaled.trials[0].time_steps());
  tspec.architecture.channels = static_cast<int>(scaled.trials[0].channels());
  tspec.batch_spec.batch_size = fit_batch_size(
      spec.train.batch_spec.batch_size, count_train_combos(scaled, tspec.batch_spec));
  out.params = train_embedder(scaled, tspec).params;
  return out;
}

inline Eigen::MatrixXd embed_indices(const EmbedderParams& params,
                                     const Dataset& ds,
                                     const std::vector<std::size_t>& idx,
                                     double scale) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(idx.size()), params.arch.embed_dim);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    Trial scaled = ds.trials[idx[i]];
    scaled.samples /= scale;
    out.row(static_cast<Eigen::Index>(i)) = forward(params, scaled);
  }
  return out;
}

inline std::vector<std::size_t> pick(const Dataset& ds, int subject, Split split,
                                     bool match_subject) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < ds.size(); ++i)
    if (ds.split[i] == split && (ds.subject_of(i) == subject) == match_subject)
      idx.push_back(i);
  return idx;
}

// The m chronologically-first TRAIN trials per class of one subject.
inline std::vector<std::size_t> calibration_indices(const Dataset& ds,
                                                    int subject,
                                                    std::optional<int> m) {
  std::vector<std::size_t> train = pick(ds, subject, Split::kTrain, true);
  if (!m.has_value()) return train;
  if (*m < 1) throw UsageError("samples_per_class must be >= 1");
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i : train) by_class[ds.class_of(i)].push_back(i);
  std::vector<std::size_t> out;
  for (auto& [cls, idx] : by_class) {
    if (static_cast<int>(idx.size()) < *m)
      throw InsufficientCalibration(
          "subject " + std::to_string(subject) + " class " +
          std::to_string(cls) + " has " + std::to_string(idx.size()) +
          " TRAIN trials, fewer than m=" + std::to_string(*m));
    std::stable_sort(idx.begin(), idx.end(),
                     [&ds](std::size_t a, std::size_t b) {
                       return ds.trials[a].order_index < ds.trials[b].order_index;
                     });
    out.insert(out.end(), idx.begin(), idx.begin() + *m);
  }
  std::sort(out.begin(), out.end());
  return out;
}

inline std::vector<int> predict_with(const ScenarioSpec& spec,
                                     const Eigen::MatrixXd& x_fit,
                                     const std::vector<int>& y_fit,
                                     const Eigen::MatrixXd& x_eval) {
  if (spec.classifier == ClassifierKind::kOneNn)
    return predict_1nn(fit_1nn(x_fit, y_fit), x_eval);
  const LogRegModel model =
      fit_logistic_regression(x_fit, y_fit, spec.logreg_C, spec.logreg_max_iter);
  return predict_logistic_regression(model, x_eval);
}

inline SubjectScore score_subject(const Dataset& ds, const ScenarioSpec& spec,
                                  const Eigen::MatrixXd& x_fit,
                                  const std::vector<int>& y_fit,
                                  const Eigen::MatrixXd& x_test,
                                  const std::vector<int>& y_test, int subject) {
  SubjectScore score;
  score.subject = subject;
  score.n_train_calibration = static_cast<int>(y_fit.size());
  const std::vector<int> pred = predict_with(spec, x_fit, y_fit, x_test);
  score.confusion = confusion(y_test, pred, class_list_of(ds));
  score.accuracy = score.confusion.accuracy();
  return score;
}

inline std::vector<int> classes_at(const Dataset& ds,
                                   const std::vector<std::size_t>& idx) {
  std::vector<int> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(ds.class_of(i));
  return out;
}

// Runs fn(subject) for every subject, optionally across threads. Results are
// collected by subject order, so aggregation does not depend on scheduling.
template <typename Fn>
std::vector<SubjectScore> run_per_subject(const std::vector<int>& subjects,
                                          int jobs, Fn fn) {
  std::vector<SubjectScore> scores(subjects.size());
  if (jobs <= 1) {
    for (std::size_t i = 0; i < subjects.size(); ++i) scores[i] = fn(subjects[i]);
    return scores;
  }
  std::atomic<std::size_t> cursor{0};
  auto worker = [&]() {
    for (;;) {
      const std::size_t i = cursor.fetch_add(1);
      if (i >= subjects.size()) return;
      scores[i] = fn(subjects[i]);
    }
  };
  std::vector<std::future<void>> pool;
  const int n_threads = std::min<int>(jobs, static_cast<int>(subjects.size()));
  for (int t = 0; t < n_threads; ++t)
    pool.push_back(std::async(std::launch::async, worker));
  for (auto& f : pool) f.get();
  return scores;
}

inline void require_test_split(const Dataset& ds) {
  for (int s : subjects_in(ds)) {
    bool has_train = false, has_test = false;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      if (ds.subject_of(i) != s) continue;
      (ds.split[i] == Split::kTrain ? has_train : has_test) = true;
    }
    if (!has_train || !has_test)
      throw DataError("subject " + std::to_string(s) +
                      " lacks a TRAIN or TEST split");
  }
}

inline void require_fold_subjects(const ScenarioSpec& spec, int fold_subjects) {
  const std::string& name = spec.config_name;
  if ((name == "b" || name == "c" || name == "d") && fold_subjects < 2)
    throw UsageError("loss config (" + name +
                     ") needs >= 2 subjects in the embedder training fold");
}

}  // namespace detail

// The m chronologically-first TRAIN trials per class of one subject
// (ascending order_index), or all of them when m is absent. Indices are into
// `dataset` and returned sorted.
inline std::vector<std::size_t> calibration_indices(const Dataset& dataset,
                                                    int subject,
                                                    std::optional<int> m) {
  return detail::calibration_indices(dataset, subject, m);
}

// Embedder trained for one LOSO fold: the TRAIN split of every subject except
// `held_out`. The held-out subject's data cannot influence the result (the
// standardization scale included). Exposed for leakage probing and for
// checkpoint exports.
inline Checkpoint train_held_out_embedder(const Dataset& dataset,
                                          const ScenarioSpec& spec,
                                          int held_out) {
  validate_dataset(dataset);
  const Dataset fold_ds = subset(
      dataset, [&](std::size_t i) { return dataset.subject_of(i) != held_out; });
  if (fold_ds.size() == 0)
    throw UsageError("no data left after holding out subject " +
                     std::to_string(held_out));
  const detail::FoldEmbedder fold =
      detail::train_fold_embedder(fold_ds, spec, spec.train.loss_config, held_out);
  return Checkpoint{fold.params, fold.scale};
}

inline std::vector<SubjectScore> run_within_subject(const Dataset& dataset,
                                                    const ScenarioSpec& spec) {
  validate_dataset(dataset);
  detail::require_test_split(dataset);
  const std::vector<int> subjects = subjects_in(dataset);
  // One subject only: cross-subject loss components would never fire.
  const LossConfig config_a = builtin_config("a");

  return detail::run_per_subject(subjects, spec.jobs, [&](int s) {
    const Dataset sub =
        subset(dataset, [&](std::size_t i) { return dataset.subject_of(i) == s; });
    const detail::FoldEmbedder fold =
        detail::train_fold_embedder(sub, spec, config_a, s);
    const auto train_idx = detail::pick(sub, s, Split::kTrain, true);
    const auto test_idx = detail::pick(sub, s, Split::kTest, true);
    const Eigen::MatrixXd x_fit =
        detail::embed_indices(fold.params, sub, train_idx, fold.scale);
    const Eigen::MatrixXd x_test =
        detail::embed_indices(fold.params, sub, test_idx, fold.scale);
    return detail::score_subject(sub, spec, x_fit,
                                 detail::classes_at(sub, train_idx), x_test,
                                 detail::classes_at(sub, test_idx), s);
  });
}

inline std::vector<SubjectScore> run_complete_loso(const Dataset& dataset,
                                                   const ScenarioSpec& spec) {
  validate_dataset(dataset);
  detail::require_test_split(dataset);
  const std::vector<int> subjects = subjects_in(dataset);
  if (subjects.size() < 2) throw UsageError("LOSO needs >= 2 subjects");
  detail::require_fold_subjects(spec, static_cast<int>(subjects.size()) - 1);

  return detail::run_per_subject(subjects, spec.jobs, [&](int s) {
    const Dataset fold_ds =
        subset(dataset, [&](std::size_t i) { return dataset.subject_of(i) != s; });
    const detail::FoldEmbedder fold =
        detail::train_fold_embedder(fold_ds, spec, spec.train.loss_config, s);
    std::vector<std::size_t> fit_idx;
    for (std::size_t i = 0; i < fold_ds.size(); ++i)
      if (fold_ds.split[i] == Split::kTrain) fit_idx.push_back(i);
    const Eigen::MatrixXd x_fit =
        detail::embed_indices(fold.params, fold_ds, fit_idx, fold.scale);
    const auto test_idx = detail::pick(dataset, s, Split::kTest, true);
    const Eigen::MatrixXd x_test =
        detail::embed_indices(fold.params, dataset, test_idx, fold.scale);
    return detail::score_subject(dataset, spec, x_fit,
                                 detail::classes_at(fold_ds, fit_idx), x_test,
                                 detail::classes_at(dataset, test_idx), s);
  });
}

inline std::vector<SubjectScore> run_partial_loso(
    const Dataset& dataset, const ScenarioSpec& spec,
    std::optional<int> samples_per_class = std::nullopt) {
  validate_dataset(dataset);
  detail::require_test_split(dataset);
  const std::vector<int> subjects = subjects_in(dataset);
  if (subjects.size() < 2) throw UsageError("LOSO needs >= 2 subjects");
  detail::require_fold_subjects(spec, static_cast<int>(subjects.size()) - 1);
  const std::optional<int> m =
      samples_per_class.has_value() ? samples_per_class : spec.samples_per_class;

  return detail::run_per_subject(subjects, spec.jobs, [&](int s) {
    const Dataset fold_ds =
        subset(dataset, [&](std::size_t i) { return dataset.subject_of(i) != s; });
    const detail::FoldEmbedder fold =
        detail::train_fold_embedder(fold_ds, spec, spec.train.loss_config, s);
    const auto calib_idx = detail::calibration_indices(dataset, s, m);
    const Eigen::MatrixXd x_fit =
        detail::embed_indices(fold.params, dataset, calib_idx, fold.scale);
    const auto test_idx = detail::pick(dataset, s, Split::kTest, true);
    const Eigen::MatrixXd x_test =
        detail::embed_indices(fold.params, dataset, test_idx, fold.scale);
    return detail::score_subject(dataset, spec, x_fit,
                                 detail::classes_at(dataset, calib_idx), x_test,
                                 detail::classes_at(dataset, test_idx), s);
  });
}

// Partial-LOSO accuracy as a function of the calibration budget m. One
// embedder per held-out subject, shared across every m; only the classifier
// is refit. Optionally hands back those embedders for inspection.
inline std::vector<CurvePoint> few_shot_curve(
    const Dataset& dataset, const ScenarioSpec& spec,
    const std::vector<int>& m_values,
    std::vector<EmbedderParams>* embedders_out = nullptr) {
  validate_dataset(dataset);
  detail::require_test_split(dataset);
  if (m_values.empty()) throw UsageError("few_shot_curve needs m values");
  for (std::size_t i = 0; i < m_values.size(); ++i) {
    if (m_values[i] < 1) throw UsageError("m values must be >= 1");
    if (i > 0 && m_values[i] <= m_values[i - 1])
      throw UsageError("m values must be strictly ascending");
  }
  const std::vector<int> subjects = subjects_in(dataset);
  if (subjects.size() < 2) throw UsageError("LOSO needs >= 2 subjects");
  detail::require_fold_subjects(spec, static_cast<int>(subjects.size()) - 1);

  // accuracy[subject position][m position]
  std::vector<std::vector<double>> acc(subjects.size(),
                                       std::vector<double>(m_values.size(), 0.0));
  if (embedders_out) embedders_out->resize(subjects.size());

  auto run_one = [&](std::size_t si) {
    const int s = subjects[si];
    const Dataset fold_ds =
        subset(dataset, [&](std::size_t i) { return dataset.subject_of(i) != s; });
    const detail::FoldEmbedder fold =
        detail::train_fold_embedder(fold_ds, spec, spec.train.loss_config, s);
    if (embedders_out) (*embedders_out)[si] = fold.params;
    const auto test_idx = detail::pick(dataset, s, Split::kTest, true);
    const Eigen::MatrixXd x_test =
        detail::embed_indices(fold.params, dataset, test_idx, fold.scale);
    const std::vector<int> y_test = detail::classes_at(dataset, test_idx);
    for (std::size_t mi = 0; mi < m_values.size(); ++mi) {
      const auto calib_idx = detail::calibration_indices(dataset, s, m_values[mi]);
      const Eigen::MatrixXd x_fit =
          detail::embed_indices(fold.params, dataset, calib_idx, fold.scale);
      const std::vector<int> pred = detail::predict_with(
          spec, x_fit, detail::classes_at(dataset, calib_idx), x_test);
      acc[si][mi] =
          confusion(y_test, pred, detail::class_list_of(dataset)).accuracy();
    }
  };

  if (spec.jobs <= 1) {
    for (std::size_t si = 0; si < subjects.size(); ++si) run_one(si);
  } else {
    std::atomic<std::size_t> cursor{0};
    auto worker = [&]() {
      for (;;) {
        const std::size_t i = cursor.fetch_add(1);
        if (i >= subjects.size()) return;
        run_one(i);
      }
    };
    std::vector<std::future<void>> pool;
    const int n_threads =
        std::min<int>(spec.jobs, static_cast<int>(subjects.size()));
    for (int t = 0; t < n_threads; ++t)
      pool.push_back(std::async(std::launch::async, worker));
    for (auto& f : pool) f.get();
  }

  std::vector<CurvePoint> curve(m_values.size());
  const double n = static_cast<double>(subjects.size());
  for (std::size_t mi = 0; mi < m_values.size(); ++mi) {
    double mean = 0.0;
    for (std::size_t si = 0; si < subjects.size(); ++si) mean += acc[si][mi];
    mean /= n;
    double var = 0.0;
    for (std::size_t si = 0; si < subjects.size(); ++si)
      var += (acc[si][mi] - mean) * (acc[si][mi] - mean);
    curve[mi].samples_per_class = m_values[mi];
    curve[mi].mean_accuracy = mean;
    curve[mi].standard_error =
        subjects.size() > 1 ? std::sqrt(var / (n - 1.0)) / std::sqrt(n) : 0.0;
  }
  return curve;
}

}  // namespace tsembed
