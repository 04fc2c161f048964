#include "focal/config.hpp"

#include <gtest/gtest.h>

using focal::ConfigError;
using focal::ExperimentConfig;
using focal::parse_config;
using nlohmann::json;

namespace {

json minimal() {
  return json::parse(R"({
    "dataset": {"kind": "synthetic", "synthetic": {"n_super": 4, "n_sub_per_super": 2}}
  })");
}

}  // namespace

TEST(Config, MinimalConfigGetsDefaults) {
  const ExperimentConfig config = parse_config(minimal());
  EXPECT_EQ(config.seed, 0u);
  EXPECT_EQ(config.dataset.synthetic.n_super, 4u);
  EXPECT_EQ(config.dataset.synthetic.dim, 64u);
  EXPECT_EQ(config.schedule.learning_rate, 0.001);
  EXPECT_EQ(config.schedule.weight_decay, 1e-4);
  EXPECT_EQ(config.sanitize_mode, focal::SanitizeMode::FocalKlTau);
  EXPECT_EQ(config.partition_mode, focal::PartitionMode::Labels);
  EXPECT_EQ(config.eval.probe.epochs, 100u);
  EXPECT_TRUE(config.probes_enabled());
}

TEST(Config, RoundTripsThroughJson) {
  json root = minimal();
  root["seed"] = 42;
  root["game"] = {{"weights", {{"beta_S", 0.75}}},
                  {"sanitize_mode", "focal_split"},
                  {"partition_mode", "model_topk"},
                  {"k", 3}};
  root["eval"] = {{"fairness", true}, {"eod_mode", "mean"}};
  const ExperimentConfig a = parse_config(root);
  const ExperimentConfig b = parse_config(focal::config_to_json(a));
  EXPECT_EQ(b.seed, 42u);
  EXPECT_EQ(b.weights.beta_S, 0.75);
  EXPECT_EQ(b.sanitize_mode, focal::SanitizeMode::FocalSplit);
  EXPECT_EQ(b.partition_mode, focal::PartitionMode::ModelTopK);
  EXPECT_EQ(b.k, 3u);
  EXPECT_TRUE(b.eval.fairness);
  EXPECT_EQ(b.eval.eod_mode, focal::EodMode::Mean);
  EXPECT_EQ(focal::config_to_json(a).dump(), focal::config_to_json(b).dump());
}

TEST(Config, RejectionsCarryFieldPaths) {
  json root = minimal();
  root["nonsense"] = 1;
  try {
    parse_config(root);
    FAIL() << "expected unknown-key rejection";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("config.nonsense"), std::string::npos);
  }

  root = minimal();
  root["dataset"]["split"] = {{"train", 0.9}, {"val", 0.2}, {"test", 0.1}};
  EXPECT_THROW(parse_config(root), ConfigError);

  root = minimal();
  root["game"] = {{"weights", {{"alpha_T", -1.0}}}};
  EXPECT_THROW(parse_config(root), ConfigError);

  root = minimal();
  root["eval"] = {{"probe_capacities", "huge"}};
  EXPECT_THROW(parse_config(root), ConfigError);

  root = minimal();
  root["dataset"]["kind"] = "parquet";
  EXPECT_THROW(parse_config(root), ConfigError);
}

TEST(Config, CsvConfigRequiresSchema) {
  json root = json::parse(R"({
    "dataset": {"kind": "csv", "csv": {"path": "adult.csv", "schema": {
      "numeric": ["age"], "categorical": ["workclass"],
      "target": "income", "target_positive": ">50K", "sensitive": "sex"}}}
  })");
  const ExperimentConfig config = parse_config(root);
  EXPECT_EQ(config.dataset.kind, focal::DatasetKind::Csv);
  EXPECT_EQ(config.dataset.schema.sensitive_column, "sex");

  root["dataset"]["csv"].erase("schema");
  EXPECT_THROW(parse_config(root), ConfigError);
}

TEST(Config, ZeroValTestAllowedOnlyWithoutProbes) {
  json root = minimal();
  root["dataset"]["split"] = {{"train", 1.0}, {"val", 0.0}, {"test", 0.0}};
  EXPECT_THROW(parse_config(root), ConfigError);
  root["eval"] = {{"probe_capacities", "none"}};
  EXPECT_NO_THROW(parse_config(root));
}
