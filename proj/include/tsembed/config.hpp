#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "tsembed/data.hpp"
#include "tsembed/errors.hpp"
#include "tsembed/io_util.hpp"
#include "tsembed/scenarios.hpp"
#include "tsembed/train.hpp"

namespace tsembed {

// Run configuration: flat `key = value` text, '#' comments, values optionally
// quoted. The `component` key may repeat; every repetition appends one loss
// component "margin,weight,pos_level,neg_level" (levels over digits 0/1/x).
// Unknown keys are rejected per subcommand. Paths inside a config resolve
// relative to the config file's directory.
struct RunConfig {
  std::map<std::string, std::string> values;
  std::vector<std::string> components;
  std::filesystem::path base_dir = ".";
};

namespace cfg {

struct KeyDoc {
  const char* key;
  const char* doc;
};

inline const std::vector<KeyDoc>& synth_keys() {
  static const std::vector<KeyDoc> keys = {
      {"n_subjects", "subjects in the synthetic dataset (default 2)"},
      {"n_classes", "imagery classes (default 2)"},
      {"trials_per_cell_train", "TRAIN trials per (subject,class) cell (default 3)"},
      {"trials_per_cell_test", "TEST trials per cell (default 1)"},
      {"time_steps", "samples per trial (default 32)"},
      {"channels", "channels per trial (default 4)"},
      {"class_separation", "distance scale between class templates (default 1.0)"},
      {"subject_separation", "distance scale between subject templates (default 1.0)"},
      {"noise_sd", "i.i.d. Gaussian noise sd (default 0.5)"},
      {"seed", "64-bit generator seed (default 0)"},
  };
  return keys;
}

inline const std::vector<KeyDoc>& model_keys() {
  static const std::vector<KeyDoc> keys = {
      {"arch", "embedder architecture: linear | miniconv (default miniconv)"},
      {"embed_dim", "embedding dimensionality d (default 8)"},
      {"f1", "miniconv temporal filters (default 8)"},
      {"depth_mult", "miniconv spatial filters per temporal map (default 2)"},
      {"f2", "miniconv pointwise filters (default 16)"},
      {"temporal_kernel", "miniconv temporal kernel length (default 32)"},
      {"sep_kernel", "miniconv separable kernel length (default 16)"},
      {"pool1", "first average-pool width (default 4)"},
      {"pool2", "second average-pool width (default 8)"},
      {"steps", "training iterations (default 1000)"},
      {"batch_size", "examples per batch (default 32)"},
      {"allowed_combinations",
       "label tuples to sample, 'subject:class;subject:class;...' (default: all in TRAIN)"},
      {"max_lr", "1cycle peak learning rate (default 1e-3)"},
      {"pct_start", "1cycle warmup fraction (default 0.3)"},
      {"lr_div", "initial lr divisor (default 25)"},
      {"lr_final_div", "final lr divisor (default 1e4)"},
      {"weight_decay", "AdamW decoupled weight decay (default 0.01)"},
      {"loss_config", "a | b | c | d | custom (default b)"},
      {"component",
       "repeatable custom loss component 'margin,weight,pos,neg' with levels over 0/1/x"},
      {"margin", "margin applied to every builtin component (default 0.2)"},
      {"mean_per_active", "divide the loss by the active-triplet count (default false)"},
      {"seed", "seed for init/batches (default 0)"},
      {"baseline_correct", "remove each trial's mean before training (default true)"},
      {"baseline_per_channel", "baseline per channel instead of whole-trial (default false)"},
      {"standardize", "divide by the fold's TRAIN sample sd (default true)"},
  };
  return keys;
}

inline const std::vector<KeyDoc>& eval_keys() {
  static std::vector<KeyDoc> keys = [] {
    std::vector<KeyDoc> k = {
        {"scenario", "within_subject | complete_loso | partial_loso (required)"},
        {"classifier", "logreg | 1nn (default logreg)"},
        {"samples_per_class",
         "partial-LOSO calibration budget m, chronologically first (default: all)"},
        {"logreg_c", "logistic regression inverse regularization (default 1.0)"},
        {"logreg_max_iter", "logistic regression iteration cap (default 100)"},
    };
    for (const KeyDoc& d : model_keys()) k.push_back(d);
    return k;
  }();
  return keys;
}

inline const std::vector<KeyDoc>& curve_keys() {
  static std::vector<KeyDoc> keys = [] {
    std::vector<KeyDoc> k = {
        {"m_values", "ascending comma-separated calibration budgets (default 1,2,4,8)"},
        {"classifier", "logreg | 1nn (default logreg)"},
        {"logreg_c", "logistic regression inverse regularization (default 1.0)"},
        {"logreg_max_iter", "logistic regression iteration cap (default 100)"},
    };
    for (const KeyDoc& d : model_keys()) k.push_back(d);
    return k;
  }();
  return keys;
}

inline const std::vector<KeyDoc>& embed_keys() {
  static const std::vector<KeyDoc> keys = {
      {"baseline_correct", "remove each trial's mean before embedding (default true)"},
      {"baseline_per_channel", "baseline per channel instead of whole-trial (default false)"},
  };
  return keys;
}

// One config file describes a whole run and is shared across subcommands, so
// key validation goes against the union of every group.
inline const std::vector<KeyDoc>& all_keys() {
  static std::vector<KeyDoc> keys = [] {
    std::vector<KeyDoc> k;
    std::set<std::string> seen;
    for (const auto* group : {&synth_keys(), &eval_keys(), &curve_keys()})
      for (const KeyDoc& d : *group)
        if (seen.insert(d.key).second) k.push_back(d);
    return k;
  }();
  return keys;
}

}  // namespace cfg

inline RunConfig parse_config_text(const std::string& text,
                                   const std::filesystem::path& base_dir,
                                   const std::string& source_name) {
  RunConfig config;
  config.base_dir = base_dir;
  std::size_t line_no = 0;
  std::string line;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t nl = text.find('\n', pos);
    line = text.substr(pos, nl == std::string::npos ? std::string::npos : nl - pos);
    pos = nl == std::string::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = ioutil::strip(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw UsageError(source_name + ":" + std::to_string(line_no) +
                       ": expected 'key = value', got '" + line + "'");
    const std::string key = ioutil::strip(line.substr(0, eq));
    std::string value = ioutil::strip(line.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"')
      value = value.substr(1, value.size() - 2);
    if (key.empty())
      throw UsageError(source_name + ":" + std::to_string(line_no) +
                       ": empty key");
    if (key == "component") {
      config.components.push_back(value);
    } else {
      if (config.values.count(key))
        throw UsageError(source_name + ":" + std::to_string(line_no) +
                         ": duplicate key '" + key + "'");
      config.values[key] = value;
    }
  }
  return config;
}

inline RunConfig parse_config_file(const std::string& path) {
  return parse_config_text(ioutil::read_binary_file(path),
                           std::filesystem::path(path).parent_path(), path);
}

inline void reject_unknown_keys(const RunConfig& config,
                                const std::vector<cfg::KeyDoc>& allowed,
                                bool components_allowed) {
  std::set<std::string> names;
  for (const cfg::KeyDoc& d : allowed) names.insert(d.key);
  for (const auto& [key, value] : config.values)
    if (!names.count(key))
      throw UsageError("unknown config key '" + key + "'");
  if (!components_allowed && !config.components.empty())
    throw UsageError("unknown config key 'component'");
}

namespace cfg {

inline std::string get(const RunConfig& c, const std::string& key,
                       const std::string& fallback) {
  const auto it = c.values.find(key);
  return it == c.values.end() ? fallback : it->second;
}

inline std::int64_t get_int(const RunConfig& c, const std::string& key,
                            std::int64_t fallback) {
  const auto it = c.values.find(key);
  if (it == c.values.end()) return fallback;
  try {
    return ioutil::parse_int(it->second, key);
  } catch (const FormatError& e) {
    throw UsageError(std::string("config key '") + key + "': " + e.what());
  }
}

inline double get_double(const RunConfig& c, const std::string& key,
                         double fallback) {
  const auto it = c.values.find(key);
  if (it == c.values.end()) return fallback;
  try {
    return ioutil::parse_double(it->second, key);
  } catch (const FormatError& e) {
    throw UsageError(std::string("config key '") + key + "': " + e.what());
  }
}

inline bool get_bool(const RunConfig& c, const std::string& key, bool fallback) {
  const auto it = c.values.find(key);
  if (it == c.values.end()) return fallback;
  const std::string& v = it->second;
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw UsageError("config key '" + key + "': expected a boolean, got '" + v + "'");
}

}  // namespace cfg

inline SyntheticSpec build_synthetic_spec(const RunConfig& c) {
  SyntheticSpec spec;
  spec.n_subjects = static_cast<int>(cfg::get_int(c, "n_subjects", 2));
  spec.n_classes = static_cast<int>(cfg::get_int(c, "n_classes", 2));
  spec.trials_per_cell_train =
      static_cast<int>(cfg::get_int(c, "trials_per_cell_train", 3));
  spec.trials_per_cell_test =
      static_cast<int>(cfg::get_int(c, "trials_per_cell_test", 1));
  spec.time_steps = static_cast<int>(cfg::get_int(c, "time_steps", 32));
  spec.channels = static_cast<int>(cfg::get_int(c, "channels", 4));
  spec.class_separation = cfg::get_double(c, "class_separation", 1.0);
  spec.subject_separation = cfg::get_double(c, "subject_separation", 1.0);
  spec.noise_sd = cfg::get_double(c, "noise_sd", 0.5);
  spec.seed = static_cast<std::uint64_t>(cfg::get_int(c, "seed", 0));
  validate_spec(spec);
  return spec;
}

inline LossComponent parse_component(const std::string& text) {
  const auto cells = ioutil::split(text, ',');
  if (cells.size() != 4)
    throw UsageError("component '" + text +
                     "' must be 'margin,weight,pos_level,neg_level'");
  LossComponent comp;
  comp.margin = ioutil::parse_double(cells[0], "component margin");
  comp.weight = ioutil::parse_double(cells[1], "component weight");
  comp.pos_level = LevelPattern::from_string(ioutil::strip(cells[2]));
  comp.neg_level = LevelPattern::from_string(ioutil::strip(cells[3]));
  return comp;
}

inline std::string component_to_string(const LossComponent& comp) {
  return ioutil::format_double(comp.margin) + "," +
         ioutil::format_double(comp.weight) + "," + comp.pos_level.to_string() +
         "," + comp.neg_level.to_string();
}

inline LossConfig build_loss_config(const RunConfig& c) {
  const std::string name = cfg::get(c, "loss_config", "b");
  LossConfig config;
  if (name == "custom") {
    if (c.components.empty())
      throw UsageError("loss_config = custom needs at least one component line");
    for (const std::string& text : c.components)
      config.components.push_back(parse_component(text));
    config.K = static_cast<int>(config.components[0].pos_level.bits.size());
  } else {
    if (!c.components.empty())
      throw UsageError("component lines require loss_config = custom");
    config = builtin_config(name, cfg::get_double(c, "margin", 0.2));
  }
  config.mean_per_active = cfg::get_bool(c, "mean_per_active", false);
  validate_config(config);
  return config;
}

inline ArchitectureSpec build_architecture(const RunConfig& c) {
  ArchitectureSpec arch;
  const std::string kind = cfg::get(c, "arch", "miniconv");
  if (kind == "linear")
    arch.kind = ArchKind::kLinear;
  else if (kind == "miniconv")
    arch.kind = ArchKind::kMiniConv;
  else
    throw UsageError("config key 'arch': expected linear|miniconv, got '" +
                     kind + "'");
  arch.embed_dim = static_cast<int>(cfg::get_int(c, "embed_dim", 8));
  arch.f1 = static_cast<int>(cfg::get_int(c, "f1", 8));
  arch.depth_mult = static_cast<int>(cfg::get_int(c, "depth_mult", 2));
  arch.f2 = static_cast<int>(cfg::get_int(c, "f2", 16));
  arch.temporal_kernel = static_cast<int>(cfg::get_int(c, "temporal_kernel", 32));
  arch.sep_kernel = static_cast<int>(cfg::get_int(c, "sep_kernel", 16));
  arch.pool1 = static_cast<int>(cfg::get_int(c, "pool1", 4));
  arch.pool2 = static_cast<int>(cfg::get_int(c, "pool2", 8));
  return arch;  // time_steps/channels filled in from the dataset
}

inline std::vector<LabelVector> parse_combinations(const std::string& text) {
  std::vector<LabelVector> combos;
  for (const std::string& part : ioutil::split(text, ';')) {
    if (ioutil::strip(part).empty()) continue;
    const auto cells = ioutil::split(part, ':');
    if (cells.size() != 2)
      throw UsageError("allowed_combinations entry '" + part +
                       "' must be 'subject:class'");
    combos.push_back(
        {static_cast<int>(ioutil::parse_int(cells[0], "allowed_combinations")),
         static_cast<int>(ioutil::parse_int(cells[1], "allowed_combinations"))});
  }
  return combos;
}

inline TrainSpec build_train_spec(const RunConfig& c) {
  TrainSpec spec;
  spec.loss_config = build_loss_config(c);
  spec.batch_spec.batch_size = static_cast<int>(cfg::get_int(c, "batch_size", 32));
  const std::string combos = cfg::get(c, "allowed_combinations", "");
  if (!combos.empty()) spec.batch_spec.allowed_combinations = parse_combinations(combos);
  spec.steps = cfg::get_int(c, "steps", 1000);
  spec.seed = static_cast<std::uint64_t>(cfg::get_int(c, "seed", 0));
  spec.architecture = build_architecture(c);
  spec.schedule.max_lr = cfg::get_double(c, "max_lr", 1e-3);
  spec.schedule.pct_start = cfg::get_double(c, "pct_start", 0.3);
  spec.schedule.div = cfg::get_double(c, "lr_div", 25.0);
  spec.schedule.final_div = cfg::get_double(c, "lr_final_div", 1e4);
  spec.weight_decay = cfg::get_double(c, "weight_decay", 0.01);
  return spec;
}

inline ScenarioSpec build_scenario_spec(const RunConfig& c, bool need_scenario) {
  ScenarioSpec spec;
  if (need_scenario) {
    const std::string scenario = cfg::get(c, "scenario", "");
    if (scenario == "within_subject")
      spec.scenario = Scenario::kWithinSubject;
    else if (scenario == "complete_loso")
      spec.scenario = Scenario::kCompleteLoso;
    else if (scenario == "partial_loso")
      spec.scenario = Scenario::kPartialLoso;
    else if (scenario.empty())
      throw UsageError("config key 'scenario' is required (within_subject | "
                       "complete_loso | partial_loso)");
    else
      throw UsageError("config key 'scenario': unknown value '" + scenario + "'");
  } else {
    spec.scenario = Scenario::kPartialLoso;
  }
  const std::string classifier = cfg::get(c, "classifier", "logreg");
  if (classifier == "logreg")
    spec.classifier = ClassifierKind::kLogReg;
  else if (classifier == "1nn")
    spec.classifier = ClassifierKind::kOneNn;
  else
    throw UsageError("config key 'classifier': expected logreg|1nn, got '" +
                     classifier + "'");
  spec.config_name = cfg::get(c, "loss_config", "b");
  spec.train = build_train_spec(c);
  spec.seed = spec.train.seed;
  spec.standardize = cfg::get_bool(c, "standardize", true);
  if (c.values.count("samples_per_class"))
    spec.samples_per_class =
        static_cast<int>(cfg::get_int(c, "samples_per_class", 0));
  spec.logreg_C = cfg::get_double(c, "logreg_c", 1.0);
  spec.logreg_max_iter = static_cast<int>(cfg::get_int(c, "logreg_max_iter", 100));
  return spec;
}

inline std::vector<int> build_m_values(const RunConfig& c) {
  const std::string text = cfg::get(c, "m_values", "1,2,4,8");
  std::vector<int> values;
  for (const std::string& part : ioutil::split(text, ','))
    values.push_back(static_cast<int>(ioutil::parse_int(part, "m_values")));
  return values;
}

}  // namespace tsembed
