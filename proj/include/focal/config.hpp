// Experiment configuration: a single JSON document, schema-validated before
// any work. Unknown keys are rejected, errors carry the field path.
#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "focal/dataset.hpp"
#include "focal/errors.hpp"
#include "focal/eval.hpp"
#include "focal/game.hpp"

namespace focal {

enum class DatasetKind { Synthetic, Csv };

struct DatasetConfig {
  DatasetKind kind = DatasetKind::Synthetic;
  SyntheticSpec synthetic;
  bool synthetic_seed_set = false;
  std::string csv_path;
  TabularSchema schema;
  SplitFractions fractions;
  bool standardize = true;
};

struct EvalConfig {
  std::string probe_capacities = "normal";  // none | normal | strong | both
  ProbeSettings probe;
  bool fairness = false;
  EodMode eod_mode = EodMode::Max;
  std::size_t hub_threshold = 4;
  std::size_t checkpoint_interval = 0;  // epochs between periodic checkpoints; 0 = final only
};

struct ExperimentConfig {
  DatasetConfig dataset;
  ArchitectureSpec arch;
  GameWeights weights;
  TrainSchedule schedule;
  SanitizeMode sanitize_mode = SanitizeMode::FocalKlTau;
  PartitionMode partition_mode = PartitionMode::Labels;
  std::size_t k = 5;
  EvalConfig eval;
  std::uint64_t seed = 0;
  std::string output_dir = "runs/run";

  bool probes_enabled() const { return eval.probe_capacities != "none"; }
};

namespace cfg {

using nlohmann::json;

inline void expect_object(const json& v, const std::string& path) {
  if (!v.is_object()) throw ConfigError(path + ": expected an object");
}

inline void check_keys(const json& obj, const std::string& path,
                       std::initializer_list<const char*> allowed) {
  for (const auto& item : obj.items()) {
    bool ok = false;
    for (const char* key : allowed)
      if (item.key() == key) ok = true;
    if (!ok) throw ConfigError(path + "." + item.key() + ": unknown key");
  }
}

inline double number(const json& obj, const std::string& path, const char* key, double fallback) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj.at(key);
  if (!v.is_number()) throw ConfigError(path + "." + key + ": expected a number");
  return v.get<double>();
}

inline std::size_t uinteger(const json& obj, const std::string& path, const char* key,
                            std::size_t fallback) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj.at(key);
  if (!v.is_number_integer() || v.get<double>() < 0)
    throw ConfigError(path + "." + key + ": expected a nonnegative integer");
  return v.get<std::size_t>();
}

inline bool boolean(const json& obj, const std::string& path, const char* key, bool fallback) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj.at(key);
  if (!v.is_boolean()) throw ConfigError(path + "." + key + ": expected a boolean");
  return v.get<bool>();
}

inline std::string text(const json& obj, const std::string& path, const char* key,
                        const std::string& fallback, bool required = false) {
  if (!obj.contains(key)) {
    if (required) throw ConfigError(path + "." + key + ": missing");
    return fallback;
  }
  const json& v = obj.at(key);
  if (!v.is_string()) throw ConfigError(path + "." + key + ": expected a string");
  return v.get<std::string>();
}

inline std::vector<std::size_t> uint_array(const json& obj, const std::string& path,
                                           const char* key,
                                           const std::vector<std::size_t>& fallback) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj.at(key);
  if (!v.is_array()) throw ConfigError(path + "." + key + ": expected an array");
  std::vector<std::size_t> out;
  for (const json& e : v) {
    if (!e.is_number_integer() || e.get<double>() < 0)
      throw ConfigError(path + "." + key + ": expected nonnegative integers");
    out.push_back(e.get<std::size_t>());
  }
  return out;
}

inline std::vector<std::string> str_array(const json& obj, const std::string& path,
                                          const char* key,
                                          const std::vector<std::string>& fallback) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj.at(key);
  if (!v.is_array()) throw ConfigError(path + "." + key + ": expected an array");
  std::vector<std::string> out;
  for (const json& e : v) {
    if (!e.is_string()) throw ConfigError(path + "." + key + ": expected strings");
    out.push_back(e.get<std::string>());
  }
  return out;
}

}  // namespace cfg

inline SanitizeMode parse_sanitize_mode(const std::string& s, const std::string& path) {
  if (s == "focal_kl_tau") return SanitizeMode::FocalKlTau;
  if (s == "focal_split") return SanitizeMode::FocalSplit;
  if (s == "maxent_uniform") return SanitizeMode::MaxentUniform;
  throw ConfigError(path + ": expected focal_kl_tau | focal_split | maxent_uniform, got '" + s +
                    "'");
}

inline ExperimentConfig parse_config(const nlohmann::json& root) {
  using cfg::json;
  cfg::expect_object(root, "config");
  cfg::check_keys(root, "config",
                  {"dataset", "architecture", "game", "eval", "seed", "output_dir"});
  ExperimentConfig config;
  config.seed = cfg::uinteger(root, "config", "seed", 0);
  config.output_dir = cfg::text(root, "config", "output_dir", "runs/run");

  if (!root.contains("dataset")) throw ConfigError("config.dataset: missing");
  const json& ds = root.at("dataset");
  cfg::expect_object(ds, "dataset");
  cfg::check_keys(ds, "dataset", {"kind", "synthetic", "csv", "split", "standardize"});
  const std::string kind = cfg::text(ds, "dataset", "kind", "", true);
  config.dataset.standardize = cfg::boolean(ds, "dataset", "standardize", true);
  if (kind == "synthetic") {
    config.dataset.kind = DatasetKind::Synthetic;
    if (!ds.contains("synthetic")) throw ConfigError("dataset.synthetic: missing");
    const json& sy = ds.at("synthetic");
    cfg::expect_object(sy, "dataset.synthetic");
    cfg::check_keys(sy, "dataset.synthetic",
                    {"n_super", "n_sub_per_super", "dim", "samples_per_sub", "sigma_super",
                     "sigma_sub", "sigma_noise", "seed"});
    SyntheticSpec& spec = config.dataset.synthetic;
    spec.n_super = cfg::uinteger(sy, "dataset.synthetic", "n_super", spec.n_super);
    spec.n_sub_per_super =
        cfg::uinteger(sy, "dataset.synthetic", "n_sub_per_super", spec.n_sub_per_super);
    spec.dim = cfg::uinteger(sy, "dataset.synthetic", "dim", spec.dim);
    spec.samples_per_sub =
        cfg::uinteger(sy, "dataset.synthetic", "samples_per_sub", spec.samples_per_sub);
    spec.sigma_super = cfg::number(sy, "dataset.synthetic", "sigma_super", spec.sigma_super);
    spec.sigma_sub = cfg::number(sy, "dataset.synthetic", "sigma_sub", spec.sigma_sub);
    spec.sigma_noise = cfg::number(sy, "dataset.synthetic", "sigma_noise", spec.sigma_noise);
    if (sy.contains("seed")) {
      spec.seed = cfg::uinteger(sy, "dataset.synthetic", "seed", 0);
      config.dataset.synthetic_seed_set = true;
    }
  } else if (kind == "csv") {
    config.dataset.kind = DatasetKind::Csv;
    if (!ds.contains("csv")) throw ConfigError("dataset.csv: missing");
    const json& cv = ds.at("csv");
    cfg::expect_object(cv, "dataset.csv");
    cfg::check_keys(cv, "dataset.csv", {"path", "schema"});
    config.dataset.csv_path = cfg::text(cv, "dataset.csv", "path", "", true);
    if (!cv.contains("schema")) throw ConfigError("dataset.csv.schema: missing");
    const json& sc = cv.at("schema");
    cfg::expect_object(sc, "dataset.csv.schema");
    cfg::check_keys(sc, "dataset.csv.schema",
                    {"numeric", "categorical", "target", "target_positive", "sensitive",
                     "missing_values"});
    TabularSchema& schema = config.dataset.schema;
    schema.numeric_columns = cfg::str_array(sc, "dataset.csv.schema", "numeric", {});
    schema.categorical_columns = cfg::str_array(sc, "dataset.csv.schema", "categorical", {});
    schema.target_column = cfg::text(sc, "dataset.csv.schema", "target", "", true);
    schema.target_positive = cfg::text(sc, "dataset.csv.schema", "target_positive", "", true);
    schema.sensitive_column = cfg::text(sc, "dataset.csv.schema", "sensitive", "", true);
    schema.missing_values =
        cfg::str_array(sc, "dataset.csv.schema", "missing_values", schema.missing_values);
  } else {
    throw ConfigError("dataset.kind: expected synthetic | csv, got '" + kind + "'");
  }
  if (ds.contains("split")) {
    const json& sp = ds.at("split");
    cfg::expect_object(sp, "dataset.split");
    cfg::check_keys(sp, "dataset.split", {"train", "val", "test"});
    config.dataset.fractions.train = cfg::number(sp, "dataset.split", "train", 0.8);
    config.dataset.fractions.val = cfg::number(sp, "dataset.split", "val", 0.1);
    config.dataset.fractions.test = cfg::number(sp, "dataset.split", "test", 0.1);
  }

  if (root.contains("architecture")) {
    const json& ar = root.at("architecture");
    cfg::expect_object(ar, "architecture");
    cfg::check_keys(ar, "architecture",
                    {"trunk_hidden", "trunk_out", "head_hidden", "embedding_dim",
                     "classifier_hidden", "decoder_hidden", "activation", "dropout"});
    ArchitectureSpec& arch = config.arch;
    arch.trunk_hidden = cfg::uint_array(ar, "architecture", "trunk_hidden", arch.trunk_hidden);
    arch.trunk_out = cfg::uinteger(ar, "architecture", "trunk_out", arch.trunk_out);
    arch.head_hidden = cfg::uint_array(ar, "architecture", "head_hidden", arch.head_hidden);
    arch.embedding_dim = cfg::uinteger(ar, "architecture", "embedding_dim", arch.embedding_dim);
    arch.classifier_hidden =
        cfg::uint_array(ar, "architecture", "classifier_hidden", arch.classifier_hidden);
    arch.decoder_hidden =
        cfg::uint_array(ar, "architecture", "decoder_hidden", arch.decoder_hidden);
    const std::string act = cfg::text(ar, "architecture", "activation", "prelu");
    if (act == "prelu") arch.activation = Activation::PRelu;
    else if (act == "leaky_relu") arch.activation = Activation::LeakyRelu;
    else if (act == "identity") arch.activation = Activation::Identity;
    else throw ConfigError("architecture.activation: expected prelu | leaky_relu | identity");
    arch.dropout = cfg::number(ar, "architecture", "dropout", arch.dropout);
    if (!(arch.dropout >= 0.0 && arch.dropout < 1.0))
      throw ConfigError("architecture.dropout: must be in [0, 1)");
  }

  if (root.contains("game")) {
    const json& gm = root.at("game");
    cfg::expect_object(gm, "game");
    cfg::check_keys(gm, "game", {"weights", "schedule", "sanitize_mode", "partition_mode", "k"});
    if (gm.contains("weights")) {
      const json& w = gm.at("weights");
      cfg::expect_object(w, "game.weights");
      cfg::check_keys(w, "game.weights", {"alpha_T", "alpha_S", "beta_T", "beta_S", "recon"});
      config.weights.alpha_T = cfg::number(w, "game.weights", "alpha_T", config.weights.alpha_T);
      config.weights.alpha_S = cfg::number(w, "game.weights", "alpha_S", config.weights.alpha_S);
      config.weights.beta_T = cfg::number(w, "game.weights", "beta_T", config.weights.beta_T);
      config.weights.beta_S = cfg::number(w, "game.weights", "beta_S", config.weights.beta_S);
      config.weights.recon = cfg::number(w, "game.weights", "recon", config.weights.recon);
    }
    if (gm.contains("schedule")) {
      const json& sc = gm.at("schedule");
      cfg::expect_object(sc, "game.schedule");
      cfg::check_keys(sc, "game.schedule",
                      {"warmup_epochs", "burnin_epochs", "batch_size", "learning_rate",
                       "weight_decay", "adversary_steps"});
      TrainSchedule& sched = config.schedule;
      sched.warmup_epochs = cfg::uinteger(sc, "game.schedule", "warmup_epochs", sched.warmup_epochs);
      sched.burnin_epochs = cfg::uinteger(sc, "game.schedule", "burnin_epochs", sched.burnin_epochs);
      sched.batch_size = cfg::uinteger(sc, "game.schedule", "batch_size", sched.batch_size);
      sched.learning_rate = cfg::number(sc, "game.schedule", "learning_rate", sched.learning_rate);
      sched.weight_decay = cfg::number(sc, "game.schedule", "weight_decay", sched.weight_decay);
      sched.adversary_steps =
          cfg::uinteger(sc, "game.schedule", "adversary_steps", sched.adversary_steps);
    }
    config.sanitize_mode = parse_sanitize_mode(
        cfg::text(gm, "game", "sanitize_mode", "focal_kl_tau"), "game.sanitize_mode");
    const std::string pm = cfg::text(gm, "game", "partition_mode", "labels");
    if (pm == "labels") config.partition_mode = PartitionMode::Labels;
    else if (pm == "model_topk") config.partition_mode = PartitionMode::ModelTopK;
    else throw ConfigError("game.partition_mode: expected labels | model_topk");
    config.k = cfg::uinteger(gm, "game", "k", config.k);
    if (config.partition_mode == PartitionMode::ModelTopK && config.k < 1)
      throw ConfigError("game.k: must be >= 1 in model_topk mode");
  }

  if (root.contains("eval")) {
    const json& ev = root.at("eval");
    cfg::expect_object(ev, "eval");
    cfg::check_keys(ev, "eval",
                    {"probe_capacities", "probe_hidden", "probe_epochs", "probe_learning_rate",
                     "probe_weight_decay", "probe_batch_size", "fairness", "eod_mode",
                     "hub_threshold", "checkpoint_interval"});
    EvalConfig& ec = config.eval;
    ec.probe_capacities = cfg::text(ev, "eval", "probe_capacities", ec.probe_capacities);
    if (ec.probe_capacities != "none" && ec.probe_capacities != "normal" &&
        ec.probe_capacities != "strong" && ec.probe_capacities != "both")
      throw ConfigError("eval.probe_capacities: expected none | normal | strong | both");
    ec.probe.hidden = cfg::uint_array(ev, "eval", "probe_hidden", ec.probe.hidden);
    ec.probe.epochs = cfg::uinteger(ev, "eval", "probe_epochs", ec.probe.epochs);
    ec.probe.learning_rate = cfg::number(ev, "eval", "probe_learning_rate", ec.probe.learning_rate);
    ec.probe.weight_decay = cfg::number(ev, "eval", "probe_weight_decay", ec.probe.weight_decay);
    ec.probe.batch_size = cfg::uinteger(ev, "eval", "probe_batch_size", ec.probe.batch_size);
    ec.fairness = cfg::boolean(ev, "eval", "fairness", ec.fairness);
    const std::string em = cfg::text(ev, "eval", "eod_mode", "max");
    if (em == "max") ec.eod_mode = EodMode::Max;
    else if (em == "mean") ec.eod_mode = EodMode::Mean;
    else throw ConfigError("eval.eod_mode: expected max | mean");
    ec.hub_threshold = cfg::uinteger(ev, "eval", "hub_threshold", ec.hub_threshold);
    ec.checkpoint_interval = cfg::uinteger(ev, "eval", "checkpoint_interval", 0);
  }

  // Validations that predate any work.
  config.weights.validate();
  config.schedule.validate();
  const double frac_total =
      config.dataset.fractions.train + config.dataset.fractions.val + config.dataset.fractions.test;
  if (std::abs(frac_total - 1.0) > 1e-9)
    throw ConfigError("dataset.split: fractions must sum to 1");
  if (config.probes_enabled() &&
      (config.dataset.fractions.val <= 0.0 || config.dataset.fractions.test <= 0.0))
    throw ConfigError("dataset.split: val and test must be > 0 when probes are configured");
  if (config.schedule.warmup_epochs > 0 && config.weights.alpha_T <= 0.0 &&
      config.weights.alpha_S <= 0.0 && config.weights.recon <= 0.0)
    throw ConfigError("game.weights: warm-up needs alpha_T, alpha_S or recon positive");
  return config;
}

inline ExperimentConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("config: cannot open " + path);
  nlohmann::json root;
  try {
    in >> root;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config: JSON parse error in " + path + ": " + e.what());
  }
  return parse_config(root);
}

inline nlohmann::json config_to_json(const ExperimentConfig& config) {
  nlohmann::json root;
  root["seed"] = config.seed;
  root["output_dir"] = config.output_dir;

  nlohmann::json ds;
  ds["standardize"] = config.dataset.standardize;
  ds["split"] = {{"train", config.dataset.fractions.train},
                 {"val", config.dataset.fractions.val},
                 {"test", config.dataset.fractions.test}};
  if (config.dataset.kind == DatasetKind::Synthetic) {
    ds["kind"] = "synthetic";
    const SyntheticSpec& sy = config.dataset.synthetic;
    nlohmann::json spec{{"n_super", sy.n_super},
                        {"n_sub_per_super", sy.n_sub_per_super},
                        {"dim", sy.dim},
                        {"samples_per_sub", sy.samples_per_sub},
                        {"sigma_super", sy.sigma_super},
                        {"sigma_sub", sy.sigma_sub},
                        {"sigma_noise", sy.sigma_noise}};
    if (config.dataset.synthetic_seed_set) spec["seed"] = sy.seed;
    ds["synthetic"] = spec;
  } else {
    ds["kind"] = "csv";
    ds["csv"] = {{"path", config.dataset.csv_path},
                 {"schema",
                  {{"numeric", config.dataset.schema.numeric_columns},
                   {"categorical", config.dataset.schema.categorical_columns},
                   {"target", config.dataset.schema.target_column},
                   {"target_positive", config.dataset.schema.target_positive},
                   {"sensitive", config.dataset.schema.sensitive_column},
                   {"missing_values", config.dataset.schema.missing_values}}}};
  }
  root["dataset"] = ds;

  const ArchitectureSpec& arch = config.arch;
  root["architecture"] = {
      {"trunk_hidden", arch.trunk_hidden},
      {"trunk_out", arch.trunk_out},
      {"head_hidden", arch.head_hidden},
      {"embedding_dim", arch.embedding_dim},
      {"classifier_hidden", arch.classifier_hidden},
      {"decoder_hidden", arch.decoder_hidden},
      {"activation", arch.activation == Activation::PRelu
                         ? "prelu"
                         : arch.activation == Activation::LeakyRelu ? "leaky_relu" : "identity"},
      {"dropout", arch.dropout}};

  root["game"] = {{"weights",
                   {{"alpha_T", config.weights.alpha_T},
                    {"alpha_S", config.weights.alpha_S},
                    {"beta_T", config.weights.beta_T},
                    {"beta_S", config.weights.beta_S},
                    {"recon", config.weights.recon}}},
                  {"schedule",
                   {{"warmup_epochs", config.schedule.warmup_epochs},
                    {"burnin_epochs", config.schedule.burnin_epochs},
                    {"batch_size", config.schedule.batch_size},
                    {"learning_rate", config.schedule.learning_rate},
                    {"weight_decay", config.schedule.weight_decay},
                    {"adversary_steps", config.schedule.adversary_steps}}},
                  {"sanitize_mode", to_string(config.sanitize_mode)},
                  {"partition_mode", to_string(config.partition_mode)},
                  {"k", config.k}};

  root["eval"] = {{"probe_capacities", config.eval.probe_capacities},
                  {"probe_hidden", config.eval.probe.hidden},
                  {"probe_epochs", config.eval.probe.epochs},
                  {"probe_learning_rate", config.eval.probe.learning_rate},
                  {"probe_weight_decay", config.eval.probe.weight_decay},
                  {"probe_batch_size", config.eval.probe.batch_size},
                  {"fairness", config.eval.fairness},
                  {"eod_mode", config.eval.eod_mode == EodMode::Max ? "max" : "mean"},
                  {"hub_threshold", config.eval.hub_threshold},
                  {"checkpoint_interval", config.eval.checkpoint_interval}};
  return root;
}

}  // namespace focal
