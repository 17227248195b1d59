// Command-line front end: synthesizes datasets, trains embedders, evaluates
// the classification scenarios, computes calibration curves, and compares
// score files statistically.
//
// Exit codes: 0 success, 1 usage error, 2 data/format error.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tsembed/config.hpp"
#include "tsembed/tsembed.hpp"

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;
using namespace tsembed;

namespace {

std::string key_help(const std::vector<cfg::KeyDoc>& keys) {
  std::string out = "\nConfig keys:\n";
  for (const cfg::KeyDoc& d : keys)
    out += "  " + std::string(d.key) + "\n      " + d.doc + "\n";
  return out;
}

void apply_overrides(RunConfig& config, const std::vector<std::string>& sets) {
  for (const std::string& entry : sets) {
    const std::size_t eq = entry.find('=');
    if (eq == std::string::npos)
      throw UsageError("--set expects key=value, got '" + entry + "'");
    const std::string key = ioutil::strip(entry.substr(0, eq));
    const std::string value = ioutil::strip(entry.substr(eq + 1));
    if (key == "component")
      config.components.push_back(value);
    else
      config.values[key] = value;
  }
}

RunConfig load_config(const std::string& path,
                      const std::vector<std::string>& sets) {
  RunConfig config;
  if (!path.empty()) config = parse_config_file(path);
  apply_overrides(config, sets);
  return config;
}

Dataset load_preprocessed(const RunConfig& config, const std::string& data_dir) {
  Dataset ds = load_dataset(data_dir);
  if (cfg::get_bool(config, "baseline_correct", true))
    baseline_correct_inplace(ds,
                             cfg::get_bool(config, "baseline_per_channel", false));
  return ds;
}

const char* scenario_name(Scenario s) {
  switch (s) {
    case Scenario::kWithinSubject: return "within_subject";
    case Scenario::kCompleteLoso: return "complete_loso";
    case Scenario::kPartialLoso: return "partial_loso";
  }
  return "?";
}

const char* classifier_name(ClassifierKind c) {
  return c == ClassifierKind::kLogReg ? "logreg" : "1nn";
}

std::string scores_csv(const std::vector<SubjectScore>& scores,
                       const std::string& scenario, const std::string& config,
                       const std::string& classifier,
                       const std::optional<int>& m) {
  std::string out = "subject,scenario,config,classifier,m,accuracy\n";
  for (const SubjectScore& s : scores)
    out += std::to_string(s.subject) + "," + scenario + "," + config + "," +
           classifier + "," + (m ? std::to_string(*m) : std::string()) + "," +
           ioutil::format_double(s.accuracy) + "\n";
  return out;
}

ordered_json confusion_json(const ConfusionMatrix& cm) {
  ordered_json j;
  j["classes"] = cm.class_ids;
  std::vector<std::vector<std::int64_t>> counts;
  for (Eigen::Index r = 0; r < cm.counts.rows(); ++r) {
    std::vector<std::int64_t> row;
    for (Eigen::Index c = 0; c < cm.counts.cols(); ++c)
      row.push_back(cm.counts(r, c));
    counts.push_back(row);
  }
  j["counts"] = counts;
  j["accuracy"] = cm.accuracy();
  ordered_json recalls = ordered_json::array();
  ordered_json precisions = ordered_json::array();
  for (std::size_t c = 0; c < cm.class_ids.size(); ++c) {
    const auto rec = cm.recall(static_cast<int>(c));
    const auto prec = cm.precision(static_cast<int>(c));
    recalls.push_back(rec ? ordered_json(*rec) : ordered_json(nullptr));
    precisions.push_back(prec ? ordered_json(*prec) : ordered_json(nullptr));
  }
  j["recall"] = recalls;
  j["precision"] = precisions;
  return j;
}

ordered_json scores_json(const std::vector<SubjectScore>& scores,
                         const std::string& scenario, const std::string& config,
                         const std::string& classifier,
                         const std::optional<int>& m, std::uint64_t seed) {
  ordered_json j;
  j["scenario"] = scenario;
  j["config"] = config;
  j["classifier"] = classifier;
  j["m"] = m ? ordered_json(*m) : ordered_json(nullptr);
  j["seed"] = seed;
  double mean = 0.0;
  ordered_json subjects = ordered_json::array();
  for (const SubjectScore& s : scores) {
    ordered_json row;
    row["subject"] = s.subject;
    row["accuracy"] = s.accuracy;
    row["n_train_calibration"] = s.n_train_calibration;
    row["confusion"] = confusion_json(s.confusion);
    subjects.push_back(row);
    mean += s.accuracy;
  }
  j["mean_accuracy"] = scores.empty() ? 0.0 : mean / scores.size();
  j["subjects"] = subjects;
  return j;
}

void write_text(const std::string& path, const std::string& text) {
  if (!path.empty()) ioutil::write_file(path, text);
}

// Scenario evaluation with a fixed, pre-trained embedder: every subject is
// embedded with the checkpoint's parameters and input scale, and only the
// classifier follows the scenario protocol. Fold purity is then up to
// whoever trained the checkpoint.
std::vector<SubjectScore> eval_with_checkpoint(const Dataset& ds,
                                               const ScenarioSpec& spec,
                                               const Checkpoint& ckpt) {
  const std::vector<int> subjects = subjects_in(ds);
  std::vector<SubjectScore> scores;
  for (int s : subjects) {
    std::vector<std::size_t> fit_idx;
    switch (spec.scenario) {
      case Scenario::kWithinSubject:
        for (std::size_t i = 0; i < ds.size(); ++i)
          if (ds.split[i] == Split::kTrain && ds.subject_of(i) == s)
            fit_idx.push_back(i);
        break;
      case Scenario::kCompleteLoso:
        for (std::size_t i = 0; i < ds.size(); ++i)
          if (ds.split[i] == Split::kTrain && ds.subject_of(i) != s)
            fit_idx.push_back(i);
        break;
      case Scenario::kPartialLoso:
        fit_idx = calibration_indices(ds, s, spec.samples_per_class);
        break;
    }
    if (fit_idx.empty())
      throw DataError("no classifier training data for subject " +
                      std::to_string(s));
    std::vector<std::size_t> test_idx;
    for (std::size_t i = 0; i < ds.size(); ++i)
      if (ds.split[i] == Split::kTest && ds.subject_of(i) == s)
        test_idx.push_back(i);

    auto embed = [&](const std::vector<std::size_t>& idx) {
      Eigen::MatrixXd out(static_cast<Eigen::Index>(idx.size()),
                          ckpt.params.arch.embed_dim);
      for (std::size_t r = 0; r < idx.size(); ++r) {
        Trial scaled = ds.trials[idx[r]];
        scaled.samples /= ckpt.input_scale;
        out.row(static_cast<Eigen::Index>(r)) = forward(ckpt.params, scaled);
      }
      return out;
    };

    std::vector<int> y_fit, y_test;
    for (std::size_t i : fit_idx) y_fit.push_back(ds.class_of(i));
    for (std::size_t i : test_idx) y_test.push_back(ds.class_of(i));

    const Eigen::MatrixXd x_fit = embed(fit_idx);
    const Eigen::MatrixXd x_test = embed(test_idx);
    std::vector<int> pred;
    if (spec.classifier == ClassifierKind::kOneNn)
      pred = predict_1nn(fit_1nn(x_fit, y_fit), x_test);
    else
      pred = predict_logistic_regression(
          fit_logistic_regression(x_fit, y_fit, spec.logreg_C,
                                  spec.logreg_max_iter),
          x_test);

    std::vector<int> class_list(static_cast<std::size_t>(ds.label_cardinalities[1]));
    for (std::size_t c = 0; c < class_list.size(); ++c)
      class_list[c] = static_cast<int>(c);
    SubjectScore score;
    score.subject = s;
    score.n_train_calibration = static_cast<int>(fit_idx.size());
    score.confusion = confusion(y_test, pred, class_list);
    score.accuracy = score.confusion.accuracy();
    scores.push_back(score);
  }
  return scores;
}

// ---------------------------------------------------------------------------
// Subcommands

int cmd_synth(const RunConfig& config, const std::string& out_dir) {
  reject_unknown_keys(config, cfg::all_keys(), true);
  const Dataset ds = generate_synthetic(build_synthetic_spec(config));
  save_dataset(ds, out_dir);
  std::cout << "wrote " << ds.size() << " trials to " << out_dir << "\n";
  return 0;
}

int cmd_train(const RunConfig& config, const std::string& data_dir,
              const std::string& out_dir) {
  reject_unknown_keys(config, cfg::all_keys(), true);
  Dataset ds = load_preprocessed(config, data_dir);
  double scale = 1.0;
  if (cfg::get_bool(config, "standardize", true)) {
    auto [scaled, s] = standardize(ds);
    ds = std::move(scaled);
    scale = s;
  }
  TrainSpec spec = build_train_spec(config);
  spec.architecture.time_steps = static_cast<int>(ds.trials[0].time_steps());
  spec.architecture.channels = static_cast<int>(ds.trials[0].channels());

  const TrainResult result = train_embedder(ds, spec);
  save_checkpoint(Checkpoint{result.params, scale}, out_dir);

  std::string trace = "step,loss\n";
  for (std::size_t i = 0; i < result.loss_trace.size(); ++i)
    trace += std::to_string(i) + "," + ioutil::format_double(result.loss_trace[i]) + "\n";
  ioutil::write_file((fs::path(out_dir) / "loss_trace.csv").string(), trace);

  std::cout << "trained " << result.params.parameter_count() << " parameters for "
            << spec.steps << " steps; final loss "
            << ioutil::format_double(result.loss_trace.back()) << "\n";
  return 0;
}

int cmd_eval(const RunConfig& config, const std::string& data_dir,
             const std::string& ckpt_dir, const std::string& out_dir, int jobs) {
  reject_unknown_keys(config, cfg::all_keys(), true);
  const Dataset ds = load_preprocessed(config, data_dir);
  ScenarioSpec spec = build_scenario_spec(config, true);
  spec.jobs = jobs;

  std::vector<SubjectScore> scores;
  if (!ckpt_dir.empty()) {
    scores = eval_with_checkpoint(ds, spec, load_checkpoint(ckpt_dir));
  } else {
    switch (spec.scenario) {
      case Scenario::kWithinSubject:
        scores = run_within_subject(ds, spec);
        spec.config_name = "a";  // what the runner actually trains with
        break;
      case Scenario::kCompleteLoso: scores = run_complete_loso(ds, spec); break;
      case Scenario::kPartialLoso: scores = run_partial_loso(ds, spec); break;
    }
  }

  const std::string scenario = scenario_name(spec.scenario);
  const std::string classifier = classifier_name(spec.classifier);
  const std::optional<int> m =
      spec.scenario == Scenario::kPartialLoso ? spec.samples_per_class : std::nullopt;
  fs::create_directories(out_dir);
  ioutil::write_file((fs::path(out_dir) / "scores.csv").string(),
                     scores_csv(scores, scenario, spec.config_name, classifier, m));
  ioutil::write_file(
      (fs::path(out_dir) / "results.json").string(),
      scores_json(scores, scenario, spec.config_name, classifier, m, spec.seed)
              .dump(2) +
          "\n");

  double mean = 0.0;
  for (const auto& s : scores) mean += s.accuracy;
  std::cout << scenario << " config=" << spec.config_name
            << " classifier=" << classifier << ": mean accuracy "
            << ioutil::format_double(scores.empty() ? 0.0 : mean / scores.size())
            << " over " << scores.size() << " subjects\n";
  return 0;
}

int cmd_curve(const RunConfig& config, const std::string& data_dir,
              const std::string& out_dir, int jobs) {
  reject_unknown_keys(config, cfg::all_keys(), true);
  const Dataset ds = load_preprocessed(config, data_dir);
  ScenarioSpec spec = build_scenario_spec(config, false);
  spec.jobs = jobs;
  const std::vector<int> m_values = build_m_values(config);
  const std::vector<CurvePoint> curve = few_shot_curve(ds, spec, m_values);

  std::string csv = "m,mean_accuracy,std_error\n";
  for (const CurvePoint& p : curve)
    csv += std::to_string(p.samples_per_class) + "," +
           ioutil::format_double(p.mean_accuracy) + "," +
           ioutil::format_double(p.standard_error) + "\n";
  fs::create_directories(out_dir);
  ioutil::write_file((fs::path(out_dir) / "curve.csv").string(), csv);
  std::cout << "wrote " << curve.size() << " curve points to " << out_dir << "\n";
  return 0;
}

std::map<int, double> read_scores_file(const std::string& path) {
  const auto lines = ioutil::read_lines(path);
  if (lines.empty() ||
      ioutil::strip(lines[0]) != "subject,scenario,config,classifier,m,accuracy")
    throw FormatError(path + ":1: bad or missing scores header");
  std::map<int, double> by_subject;
  for (std::size_t li = 1; li < lines.size(); ++li) {
    if (ioutil::strip(lines[li]).empty()) continue;
    const std::string where = path + ":" + std::to_string(li + 1);
    const auto cells = ioutil::split(lines[li], ',');
    if (cells.size() != 6) throw FormatError(where + ": expected 6 cells");
    const int subject = static_cast<int>(ioutil::parse_int(cells[0], where));
    if (by_subject.count(subject))
      throw FormatError(where + ": duplicate subject " + std::to_string(subject));
    by_subject[subject] = ioutil::parse_double(cells[5], where);
  }
  if (by_subject.empty()) throw FormatError(path + ": no score rows");
  return by_subject;
}

int cmd_stats(const std::vector<std::string>& score_files, double alpha,
              const std::string& out_file) {
  if (score_files.size() < 2)
    throw UsageError("stats needs at least two --scores files");
  std::vector<std::map<int, double>> tables;
  for (const std::string& path : score_files)
    tables.push_back(read_scores_file(path));
  for (std::size_t i = 1; i < tables.size(); ++i) {
    if (tables[i].size() != tables[0].size())
      throw DataError(score_files[i] + " has a different subject set than " +
                      score_files[0]);
    for (const auto& [subject, acc] : tables[0])
      if (!tables[i].count(subject))
        throw DataError(score_files[i] + " lacks subject " +
                        std::to_string(subject));
  }

  ordered_json report;
  report["alpha"] = alpha;
  ordered_json comparisons = ordered_json::array();
  std::vector<double> p_values;
  std::vector<std::size_t> testable;  // comparison index per p value
  for (std::size_t i = 0; i < tables.size(); ++i)
    for (std::size_t j = i + 1; j < tables.size(); ++j) {
      std::vector<double> a, b;
      for (const auto& [subject, acc] : tables[i]) {
        a.push_back(acc);
        b.push_back(tables[j].at(subject));
      }
      ordered_json cmp;
      cmp["a"] = score_files[i];
      cmp["b"] = score_files[j];
      try {
        const StatResult r = wilcoxon_signed_rank(a, b);
        cmp["n_effective"] = r.n_effective;
        cmp["w"] = r.statistic_w;
        cmp["p"] = r.p_value;
        testable.push_back(comparisons.size());
        p_values.push_back(r.p_value);
      } catch (const AllZeroDifferences&) {
        cmp["n_effective"] = 0;
        cmp["w"] = nullptr;
        cmp["p"] = nullptr;
        cmp["note"] = "all paired differences are zero; test not applicable";
      }
      comparisons.push_back(cmp);
    }

  const std::vector<bool> decisions = holm_bonferroni(p_values, alpha);
  for (std::size_t k = 0; k < testable.size(); ++k)
    comparisons[testable[k]]["significant_after_holm"] =
        static_cast<bool>(decisions[k]);
  report["comparisons"] = comparisons;

  const std::string text = report.dump(2) + "\n";
  std::cout << text;
  write_text(out_file, text);
  return 0;
}

int cmd_embed(const RunConfig& config, const std::string& data_dir,
              const std::string& ckpt_dir, const std::string& out_csv,
              const std::string& project) {
  reject_unknown_keys(config, cfg::all_keys(), true);
  if (!project.empty() && project != "pca2")
    throw UsageError("--project supports only 'pca2'");
  const Dataset ds = load_preprocessed(config, data_dir);
  const Checkpoint ckpt = load_checkpoint(ckpt_dir);

  Eigen::MatrixXd embeddings(static_cast<Eigen::Index>(ds.size()),
                             ckpt.params.arch.embed_dim);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    Trial scaled = ds.trials[i];
    scaled.samples /= ckpt.input_scale;
    embeddings.row(static_cast<Eigen::Index>(i)) = forward(ckpt.params, scaled);
  }

  Eigen::MatrixXd projected;
  if (!project.empty()) {
    const PcaResult pca = pca_project(embeddings, 2);
    projected = pca.projected;
    if (projected.cols() < 2)
      std::cerr << "warning: embedding rank below 2, pca kept "
                << projected.cols() << " column(s)\n";
  }

  std::string csv = "trial_id";
  for (int k = 0; k < ckpt.params.arch.embed_dim; ++k)
    csv += ",e" + std::to_string(k);
  csv += ",subject,im_class";
  for (Eigen::Index k = 0; k < projected.cols(); ++k)
    csv += ",pca" + std::to_string(k);
  csv += "\n";
  for (std::size_t i = 0; i < ds.size(); ++i) {
    csv += std::to_string(ds.trials[i].trial_id);
    for (int k = 0; k < ckpt.params.arch.embed_dim; ++k)
      csv += "," + ioutil::format_double(embeddings(static_cast<Eigen::Index>(i), k));
    csv += "," + std::to_string(ds.labels[i][0]) + "," +
           std::to_string(ds.labels[i][1]);
    for (Eigen::Index k = 0; k < projected.cols(); ++k)
      csv += "," + ioutil::format_double(projected(static_cast<Eigen::Index>(i), k));
    csv += "\n";
  }
  ioutil::write_file(out_csv, csv);
  std::cout << "wrote " << ds.size() << " embeddings to " << out_csv << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tsembed: metric-learning embeddings for multichannel "
               "time-series trials"};
  app.require_subcommand(1);

  std::string config_path, data_dir, out_path, ckpt_dir, project;
  std::vector<std::string> sets, score_files;
  double alpha = 0.05;
  int jobs = 1;

  auto add_config = [&](CLI::App* sub) {
    sub->add_option("config", config_path, "run configuration file")
        ->check(CLI::ExistingFile);
    sub->add_option("--set", sets, "override a config key (key=value), repeatable");
  };

  CLI::App* synth = app.add_subcommand(
      "synth", "generate a synthetic dataset" + key_help(cfg::synth_keys()));
  add_config(synth);
  synth->add_option("--out", out_path, "output dataset directory")->required();

  CLI::App* train = app.add_subcommand(
      "train", "train an embedder on a dataset" + key_help(cfg::model_keys()));
  add_config(train);
  train->add_option("--data", data_dir, "dataset directory")->required();
  train->add_option("--out", out_path, "output checkpoint directory")->required();

  CLI::App* eval = app.add_subcommand(
      "eval", "run an evaluation scenario" + key_help(cfg::eval_keys()));
  add_config(eval);
  eval->add_option("--data", data_dir, "dataset directory")->required();
  eval->add_option("--ckpt", ckpt_dir,
                   "embedder checkpoint (skips per-fold training)");
  eval->add_option("--out", out_path, "output directory")->required();
  eval->add_option("--jobs", jobs, "per-subject parallelism (default 1)");

  CLI::App* curve = app.add_subcommand(
      "curve", "partial-LOSO few-shot calibration curve" + key_help(cfg::curve_keys()));
  add_config(curve);
  curve->add_option("--data", data_dir, "dataset directory")->required();
  curve->add_option("--out", out_path, "output directory")->required();
  curve->add_option("--jobs", jobs, "per-subject parallelism (default 1)");

  CLI::App* stats = app.add_subcommand(
      "stats", "paired Wilcoxon signed-rank tests with Holm-Bonferroni "
               "correction over score files");
  stats->add_option("--scores", score_files, "scores.csv file, repeat >= 2 times")
      ->required();
  stats->add_option("--alpha", alpha, "significance level (default 0.05)");
  stats->add_option("--out", out_path, "also write the JSON report here");

  CLI::App* embed = app.add_subcommand(
      "embed", "export embedding vectors as CSV" + key_help(cfg::embed_keys()));
  add_config(embed);
  embed->add_option("--data", data_dir, "dataset directory")->required();
  embed->add_option("--ckpt", ckpt_dir, "embedder checkpoint")->required();
  embed->add_option("--out", out_path, "output CSV file")->required();
  embed->add_option("--project", project, "append a 2D projection: pca2");

  try {
    app.parse(argc, argv);
    if (synth->parsed()) return cmd_synth(load_config(config_path, sets), out_path);
    if (train->parsed())
      return cmd_train(load_config(config_path, sets), data_dir, out_path);
    if (eval->parsed())
      return cmd_eval(load_config(config_path, sets), data_dir, ckpt_dir,
                      out_path, jobs);
    if (curve->parsed())
      return cmd_curve(load_config(config_path, sets), data_dir, out_path, jobs);
    if (stats->parsed()) return cmd_stats(score_files, alpha, out_path);
    if (embed->parsed())
      return cmd_embed(load_config(config_path, sets), data_dir, ckpt_dir,
                       out_path, project);
    return 1;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
