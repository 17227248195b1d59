#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "tsembed/scenarios.hpp"

using namespace tsembed;

namespace {

Dataset make_synth(int n_subjects, int n_classes, int train, int test,
                   double class_sep, double subj_sep, double noise,
                   std::uint64_t seed) {
  SyntheticSpec spec;
  spec.n_subjects = n_subjects;
  spec.n_classes = n_classes;
  spec.trials_per_cell_train = train;
  spec.trials_per_cell_test = test;
  spec.time_steps = 16;
  spec.channels = 4;
  spec.class_separation = class_sep;
  spec.subject_separation = subj_sep;
  spec.noise_sd = noise;
  spec.seed = seed;
  return generate_synthetic(spec);
}

ScenarioSpec linear_scenario(const std::string& config_name, int steps = 150) {
  ScenarioSpec spec;
  spec.config_name = config_name;
  spec.train.loss_config = builtin_config(config_name);
  spec.train.steps = steps;
  spec.train.batch_spec.batch_size = 16;
  spec.train.architecture.kind = ArchKind::kLinear;
  spec.train.architecture.embed_dim = 4;
  spec.seed = 11;
  return spec;
}

bool params_equal(const EmbedderParams& a, const EmbedderParams& b) {
  if (a.tensors.size() != b.tensors.size()) return false;
  for (std::size_t i = 0; i < a.tensors.size(); ++i)
    if (a.tensors[i].value != b.tensors[i].value) return false;
  return true;
}

}  // namespace

TEST_CASE("within-subject on point-like clusters reaches accuracy 1") {
  const Dataset ds = make_synth(1, 2, 6, 2, 10.0, 1.0, 1e-6, 3);
  const ScenarioSpec spec = linear_scenario("a");
  const auto scores = run_within_subject(ds, spec);
  REQUIRE(scores.size() == 1);
  REQUIRE(scores[0].accuracy == 1.0);
  REQUIRE(scores[0].confusion.accuracy() == scores[0].accuracy);
  REQUIRE(scores[0].n_train_calibration == 12);
}

TEST_CASE("within-subject produces one score per subject") {
  const Dataset ds = make_synth(3, 2, 5, 1, 4.0, 1.0, 0.2, 4);
  const auto scores = run_within_subject(ds, linear_scenario("a", 60));
  REQUIRE(scores.size() == 3);
  for (const auto& s : scores)
    REQUIRE(s.accuracy == Catch::Approx(s.confusion.accuracy()));
}

TEST_CASE("missing TEST split is rejected") {
  Dataset ds = make_synth(2, 2, 4, 1, 4.0, 1.0, 0.2, 5);
  // Drop subject 1's TEST trials.
  ds = subset(ds, [&](std::size_t i) {
    return !(ds.subject_of(i) == 1 && ds.split[i] == Split::kTest);
  });
  REQUIRE_THROWS_AS(run_within_subject(ds, linear_scenario("a")), DataError);
}

TEST_CASE("complete LOSO trains one model per held-out subject") {
  const Dataset ds = make_synth(2, 2, 6, 2, 5.0, 1.0, 0.1, 6);
  const auto scores = run_complete_loso(ds, linear_scenario("a", 80));
  REQUIRE(scores.size() == 2);
  REQUIRE(scores[0].subject == 0);
  REQUIRE(scores[1].subject == 1);
  // Classifier was fit on the other subject's TRAIN trials only.
  for (const auto& s : scores) REQUIRE(s.n_train_calibration == 12);
}

TEST_CASE("LOSO configs b-d need at least two training-fold subjects") {
  const Dataset ds = make_synth(2, 2, 4, 1, 4.0, 1.0, 0.2, 7);
  REQUIRE_THROWS_AS(run_complete_loso(ds, linear_scenario("b", 30)), UsageError);
  const Dataset ds3 = make_synth(3, 2, 4, 1, 4.0, 1.0, 0.2, 7);
  REQUIRE_NOTHROW(run_complete_loso(ds3, linear_scenario("b", 30)));
}

TEST_CASE("leakage probe: held-out TRAIN data cannot move the checkpoint") {
  const Dataset base = make_synth(3, 2, 5, 2, 3.0, 2.0, 0.3, 8);
  Dataset perturbed = base;
  for (std::size_t i = 0; i < perturbed.size(); ++i)
    if (perturbed.subject_of(i) == 0 && perturbed.split[i] == Split::kTrain)
      perturbed.trials[i].samples.array() += 5.0;

  const ScenarioSpec spec = linear_scenario("b", 40);
  const Checkpoint a = train_held_out_embedder(base, spec, 0);
  const Checkpoint b = train_held_out_embedder(perturbed, spec, 0);
  REQUIRE(a.input_scale == b.input_scale);
  REQUIRE(params_equal(a.params, b.params));

  // Perturbing a training subject does move it.
  Dataset moved = base;
  for (std::size_t i = 0; i < moved.size(); ++i)
    if (moved.subject_of(i) == 1 && moved.split[i] == Split::kTrain)
      moved.trials[i].samples.array() += 5.0;
  const Checkpoint c = train_held_out_embedder(moved, spec, 0);
  REQUIRE_FALSE(params_equal(a.params, c.params));
}

TEST_CASE("partial LOSO with m=1 fits on one point per class") {
  const Dataset ds = make_synth(2, 3, 6, 2, 6.0, 1.0, 0.05, 9);
  ScenarioSpec spec = linear_scenario("a", 80);
  spec.classifier = ClassifierKind::kOneNn;
  const auto scores = run_partial_loso(ds, spec, 1);
  REQUIRE(scores.size() == 2);
  for (const auto& s : scores) {
    REQUIRE(s.n_train_calibration == 3);  // one per class
    REQUIRE(std::isfinite(s.accuracy));
  }
}

TEST_CASE("partial LOSO rejects oversized calibration budgets") {
  const Dataset ds = make_synth(2, 2, 4, 1, 4.0, 1.0, 0.2, 10);
  REQUIRE_THROWS_AS(run_partial_loso(ds, linear_scenario("a", 20), 5),
                    InsufficientCalibration);
}

TEST_CASE("calibration picks the chronologically first trials per class") {
  const Dataset ds = make_synth(2, 2, 5, 1, 4.0, 1.0, 0.2, 11);
  const auto idx = calibration_indices(ds, 1, 2);
  REQUIRE(idx.size() == 4);
  // Per class, the two lowest order_index TRAIN trials of subject 1.
  std::map<int, std::vector<std::int64_t>> orders;
  for (std::size_t i : idx) {
    REQUIRE(ds.subject_of(i) == 1);
    REQUIRE(ds.split[i] == Split::kTrain);
    orders[ds.class_of(i)].push_back(ds.trials[i].order_index);
  }
  for (auto& [cls, got] : orders) {
    std::vector<std::int64_t> all;
    for (std::size_t i = 0; i < ds.size(); ++i)
      if (ds.subject_of(i) == 1 && ds.class_of(i) == cls &&
          ds.split[i] == Split::kTrain)
        all.push_back(ds.trials[i].order_index);
    std::sort(all.begin(), all.end());
    std::sort(got.begin(), got.end());
    REQUIRE(got == std::vector<std::int64_t>(all.begin(), all.begin() + 2));
  }
}

TEST_CASE("strong subject shift favors partial over complete LOSO") {
  const Dataset ds = make_synth(4, 2, 10, 4, 1.0, 6.0, 0.05, 12);
  const ScenarioSpec spec = linear_scenario("b", 250);
  const auto complete = run_complete_loso(ds, spec);
  const auto partial = run_partial_loso(ds, spec);
  double mean_complete = 0.0, mean_partial = 0.0;
  for (const auto& s : complete) mean_complete += s.accuracy;
  for (const auto& s : partial) mean_partial += s.accuracy;
  mean_complete /= complete.size();
  mean_partial /= partial.size();
  REQUIRE(mean_partial >= mean_complete);
}

TEST_CASE("few-shot curve is consistent with partial LOSO runs") {
  const Dataset ds = make_synth(3, 2, 6, 2, 4.0, 2.0, 0.1, 13);
  const ScenarioSpec spec = linear_scenario("b", 60);

  std::vector<EmbedderParams> embedders;
  const auto curve = few_shot_curve(ds, spec, {1, 6}, &embedders);
  REQUIRE(curve.size() == 2);
  REQUIRE(curve[0].samples_per_class == 1);
  REQUIRE(curve[1].samples_per_class == 6);

  const auto partial_m1 = run_partial_loso(ds, spec, 1);
  double mean_m1 = 0.0;
  for (const auto& s : partial_m1) mean_m1 += s.accuracy;
  mean_m1 /= partial_m1.size();
  REQUIRE(curve[0].mean_accuracy == Catch::Approx(mean_m1).margin(1e-12));

  // m = full TRAIN count per class equals the untruncated run.
  const auto partial_full = run_partial_loso(ds, spec);
  double mean_full = 0.0;
  for (const auto& s : partial_full) mean_full += s.accuracy;
  mean_full /= partial_full.size();
  REQUIRE(curve[1].mean_accuracy == Catch::Approx(mean_full).margin(1e-12));

  // The curve reuses exactly the fold embedders the scenario runners train.
  REQUIRE(embedders.size() == 3);
  const auto subjects = subjects_in(ds);
  for (std::size_t si = 0; si < subjects.size(); ++si) {
    const Checkpoint ck = train_held_out_embedder(ds, spec, subjects[si]);
    REQUIRE(params_equal(ck.params, embedders[si]));
  }

  REQUIRE_THROWS_AS(few_shot_curve(ds, spec, {2, 2}), UsageError);
  REQUIRE_THROWS_AS(few_shot_curve(ds, spec, {}), UsageError);
}

TEST_CASE("few-shot accuracy at full budget keeps up with m=1 across seeds") {
  // Noiseless clusters: more calibration data cannot hurt on average.
  double acc_m1 = 0.0, acc_full = 0.0;
  const int n_seeds = 5;
  for (int seed = 0; seed < n_seeds; ++seed) {
    const Dataset ds = make_synth(3, 2, 5, 2, 4.0, 2.0, 1e-5, 100 + seed);
    ScenarioSpec spec = linear_scenario("b", 120);
    spec.seed = 200 + seed;
    const auto curve = few_shot_curve(ds, spec, {1, 5});
    acc_m1 += curve[0].mean_accuracy;
    acc_full += curve[1].mean_accuracy;
  }
  REQUIRE(acc_full / n_seeds >= acc_m1 / n_seeds - 0.05);
}

TEST_CASE("parallel jobs reproduce the single-job scores") {
  const Dataset ds = make_synth(4, 2, 5, 2, 3.0, 2.0, 0.2, 14);
  ScenarioSpec spec = linear_scenario("b", 50);
  const auto sequential = run_complete_loso(ds, spec);
  spec.jobs = 4;
  const auto parallel = run_complete_loso(ds, spec);
  REQUIRE(sequential.size() == parallel.size());
  for (std::size_t i = 0; i < sequential.size(); ++i) {
    REQUIRE(sequential[i].subject == parallel[i].subject);
    REQUIRE(sequential[i].accuracy == parallel[i].accuracy);
    REQUIRE(sequential[i].confusion.counts == parallel[i].confusion.counts);
  }
}
