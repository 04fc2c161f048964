// focal-sanitizer: train split encoders with focal-entropy sanitization and
// evaluate the resulting embeddings.
//
// Exit codes: 0 ok, 2 config error, 3 I/O error, 4 numeric failure,
// 5 artifact mismatch.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "focal/experiment.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CommonOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::string mode;
};

focal::ExperimentConfig resolve_config(const CommonOptions& opts) {
  focal::ExperimentConfig config = focal::load_config_file(opts.config_path);
  if (const char* env = std::getenv("FOCAL_SANITIZER_SEED")) {
    char* end = nullptr;
    const unsigned long long v = std::strtoull(env, &end, 10);
    if (end == env || *end != '\0')
      throw focal::ConfigError("FOCAL_SANITIZER_SEED: not an integer: " + std::string(env));
    config.seed = v;
  }
  if (opts.seed) config.seed = *opts.seed;
  if (!opts.out_dir.empty()) config.output_dir = opts.out_dir;
  if (!opts.mode.empty())
    config.sanitize_mode = focal::parse_sanitize_mode(opts.mode, "--mode");
  return config;
}

std::ofstream open_output(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw focal::IoError("cannot write " + path.string());
  return out;
}

void write_text_file(const fs::path& path, const std::string& content) {
  std::ofstream out = open_output(path);
  out << content;
  if (!out) throw focal::IoError("write failed: " + path.string());
}

fs::path ensure_output_dir(const focal::ExperimentConfig& config) {
  const fs::path dir(config.output_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw focal::IoError("cannot create output directory " + dir.string());
  return dir;
}

// Timestamps and host details stay out of the science outputs.
void write_manifest(const fs::path& dir, const std::string& command) {
  json manifest;
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  manifest["created_utc"] = buf;
  manifest["command"] = command;
  manifest["checkpoint_version"] = focal::kCheckpointVersion;
  write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

void check_checkpoint_matches(const focal::TrainState& state, const focal::PreparedData& data) {
  if (state.input_dim != data.input_dim || state.n_target_classes != data.n_target_classes ||
      state.n_sensitive_classes != data.n_sensitive_classes)
    throw focal::ArtifactError(
        "checkpoint/dataset mismatch: checkpoint expects input_dim=" +
        std::to_string(state.input_dim) + ", targets=" + std::to_string(state.n_target_classes) +
        ", sensitive=" + std::to_string(state.n_sensitive_classes));
}

focal::TrainState load_checkpoint_file(const fs::path& path) {
  if (!fs::exists(path)) throw focal::IoError("checkpoint not found: " + path.string());
  std::ifstream in(path, std::ios::binary);
  if (!in) throw focal::IoError("cannot read " + path.string());
  return focal::load_train_state(in);
}

// --------------------------------------------------------------------------
// Subcommands
// --------------------------------------------------------------------------

int cmd_gen_data(const CommonOptions& opts, const std::string& dataset_file) {
  const focal::ExperimentConfig config = resolve_config(opts);
  if (config.dataset.kind != focal::DatasetKind::Synthetic)
    throw focal::ConfigError("dataset.synthetic: missing (gen-data needs a synthetic section)");
  const focal::LabeledDataset data = focal::build_dataset(config, nullptr, nullptr);

  const fs::path dir = ensure_output_dir(config);
  const fs::path path = dataset_file.empty() ? dir / "dataset.bin" : fs::path(dataset_file);
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  std::ofstream out = open_output(path);
  focal::save_dataset(out, data);
  if (!out) throw focal::IoError("write failed: " + path.string());

  std::printf(
      "wrote %s: %zu rows, %zu target classes (chance %.4f), %zu sensitive classes, chance %.4f\n",
      path.string().c_str(), data.size(), data.n_target_classes,
      1.0 / static_cast<double>(data.n_target_classes), data.n_sensitive_classes,
      1.0 / static_cast<double>(data.n_sensitive_classes));
  return 0;
}

int cmd_train(const CommonOptions& opts) {
  const focal::ExperimentConfig config = resolve_config(opts);
  const focal::PreparedData data = focal::prepare_data(config);
  const fs::path dir = ensure_output_dir(config);

  write_text_file(dir / "run_config.json", focal::config_to_json(config).dump(2) + "\n");
  write_manifest(dir, "train");

  std::ofstream metrics = open_output(dir / "metrics.csv");
  focal::write_metrics_header(metrics);
  const std::size_t interval = config.eval.checkpoint_interval;

  const focal::TrainState state = focal::run_training(
      config, data, [&](const focal::TrainState& st, const focal::EpochMetrics& m) {
        focal::write_metrics_row(metrics, m);
        metrics.flush();
        std::printf("[%s] epoch %zu  loss=%.5f  acc_target=%.4f  acc_adv_sensitive=%.4f\n",
                    focal::to_string(m.phase), m.epoch, m.loss_total, m.acc_target_train,
                    m.acc_sensitive_adv_train);
        if (interval > 0 && (m.epoch + 1) % interval == 0) {
          std::ofstream ck =
              open_output(dir / ("checkpoint_epoch_" + std::to_string(m.epoch) + ".bin"));
          focal::save_train_state(ck, st);
        }
      });

  {
    std::ofstream ck = open_output(dir / "checkpoint.bin");
    focal::save_train_state(ck, state);
    if (!ck) throw focal::IoError("write failed: checkpoint.bin");
  }
  write_text_file(dir / "summary.json", focal::train_summary(config, state, data).dump(2) + "\n");
  std::printf("done: %zu epochs, artifacts in %s\n", state.epoch, dir.string().c_str());
  return 0;
}

int cmd_probe(const CommonOptions& opts, const std::string& capacity,
              const std::string& checkpoint_path) {
  const focal::ExperimentConfig config = resolve_config(opts);
  const fs::path dir = ensure_output_dir(config);
  const fs::path ck_path =
      checkpoint_path.empty() ? dir / "checkpoint.bin" : fs::path(checkpoint_path);
  const focal::TrainState state = load_checkpoint_file(ck_path);

  const focal::PreparedData data = focal::prepare_data(config);
  check_checkpoint_matches(state, data);

  const std::string capacity_choice = capacity.empty() ? config.eval.probe_capacities : capacity;
  const std::vector<focal::ProbeCapacity> capacities =
      focal::capacities_from_string(capacity_choice);
  if (capacities.empty()) throw focal::ConfigError("probe: capacity 'none' leaves nothing to do");

  const std::vector<focal::ProbeReport> reports = focal::run_probes(
      state, data.splits, config.eval.probe, capacities, focal::derive_seed(config.seed, 0x9909));

  std::ofstream out = open_output(dir / "probes.csv");
  focal::write_probes_csv(out, reports);
  for (const focal::ProbeReport& r : reports)
    std::printf("probe %s/%s (%s): train=%.4f val=%.4f test=%.4f (chance %.4f)\n",
                r.embedding_kind.c_str(), r.label_kind.c_str(), focal::to_string(r.capacity),
                r.train_accuracy, r.val_accuracy, r.test_accuracy, r.chance_level);
  return 0;
}

std::vector<focal::GridAxis> parse_grid(const std::string& spec) {
  if (spec.empty()) throw focal::ConfigError("grid: empty grid");
  std::vector<focal::GridAxis> axes;
  std::size_t pos = 0;
  while (pos < spec.size()) {
    const std::size_t eq = spec.find('=', pos);
    if (eq == std::string::npos || eq == pos)
      throw focal::ConfigError("grid: parse error at position " + std::to_string(pos) +
                               " (expected name=v1,v2,...)");
    focal::GridAxis axis;
    axis.name = spec.substr(pos, eq - pos);
    std::size_t vstart = eq + 1;
    const std::size_t axis_end = std::min(spec.find(';', vstart), spec.size());
    while (vstart < axis_end) {
      std::size_t vend = std::min(spec.find(',', vstart), axis_end);
      const std::string token = spec.substr(vstart, vend - vstart);
      char* end = nullptr;
      const double v = std::strtod(token.c_str(), &end);
      if (token.empty() || end != token.c_str() + token.size())
        throw focal::ConfigError("grid: parse error at position " + std::to_string(vstart) +
                                 " (bad number '" + token + "')");
      axis.values.push_back(v);
      vstart = vend + 1;
    }
    if (axis.values.empty())
      throw focal::ConfigError("grid: parse error at position " + std::to_string(eq + 1) +
                               " (no values)");
    axes.push_back(std::move(axis));
    pos = axis_end == spec.size() ? spec.size() : axis_end + 1;
  }
  return axes;
}

int cmd_sweep(const CommonOptions& opts, const std::string& grid_spec, std::size_t parallel) {
  const focal::ExperimentConfig config = resolve_config(opts);
  const std::vector<focal::GridAxis> axes = parse_grid(grid_spec);
  const fs::path dir = ensure_output_dir(config);
  write_manifest(dir, "sweep");

  const std::vector<focal::GridRowResult> results =
      focal::grid_search(config, axes, std::max<std::size_t>(parallel, 1));

  {
    std::ofstream out = open_output(dir / "sweep.csv");
    focal::write_grid_csv(out, results);
  }
  if (axes.size() == 1 && axes[0].name == "beta_S") {
    std::vector<focal::TradeoffRow> curve;
    for (const focal::GridRowResult& r : results) {
      focal::TradeoffRow row;
      row.beta = r.point.assignments.front().second;
      row.ok = r.ok;
      row.error = r.error;
      row.target_accuracy = r.target_accuracy;
      row.adversarial_accuracy = r.adversarial_accuracy;
      curve.push_back(row);
    }
    std::stable_sort(curve.begin(), curve.end(),
                     [](const auto& a, const auto& b) { return a.beta < b.beta; });
    std::ofstream out = open_output(dir / "curve.csv");
    focal::write_curve_csv(out, curve);
  }
  std::size_t failures = 0;
  for (const auto& r : results)
    if (!r.ok) ++failures;
  std::printf("sweep: %zu points, %zu failed, results in %s\n", results.size(), failures,
              dir.string().c_str());
  return 0;
}

int cmd_report(const CommonOptions& opts) {
  const focal::ExperimentConfig config = resolve_config(opts);
  const fs::path dir(config.output_dir);
  if (!fs::exists(dir / "metrics.csv"))
    throw focal::ArtifactError("incomplete run directory: missing metrics.csv in " + dir.string());
  if (!fs::exists(dir / "checkpoint.bin"))
    throw focal::ArtifactError("incomplete run directory: missing checkpoint.bin in " +
                               dir.string());

  const focal::TrainState state = load_checkpoint_file(dir / "checkpoint.bin");
  const focal::PreparedData data = focal::prepare_data(config);
  check_checkpoint_matches(state, data);

  json summary;
  summary["seed"] = config.seed;

  {
    std::ofstream out = open_output(dir / "embeddings.csv");
    focal::export_embeddings(state.encoder, data.splits, out);
  }

  // Hub analysis of the training-time adversary on the test split.
  const focal::HubGraph graph =
      focal::hub_graph(state.encoder, state.adversary_sensitive, data.splits.test);
  {
    std::ofstream out = open_output(dir / "hub_edges.csv");
    out << "true_class,predicted_class,count\n";
    for (const auto& [edge, count] : graph.edges)
      out << edge.first << ',' << edge.second << ',' << count << '\n';
    std::ofstream hist = open_output(dir / "hub_in_degrees.csv");
    hist << "class,in_degree\n";
    const auto degrees = graph.in_degrees();
    for (std::size_t cls = 0; cls < degrees.size(); ++cls)
      hist << cls << ',' << degrees[cls] << '\n';
  }
  summary["hub"] = {{"average_out_degree", graph.average_out_degree()},
                    {"distinct_edges", graph.edges.size()},
                    {"hub_threshold", config.eval.hub_threshold},
                    {"hub_count", graph.hub_count(config.eval.hub_threshold)}};

  // Attribute-level delta accuracy for the two label sets every run has.
  const focal::EmbeddingSplits emb = focal::encode_splits(state.encoder, data.splits);
  std::vector<focal::AttributeLabels> attributes(2);
  attributes[0].name = "target";
  attributes[0].train = data.splits.train.target_labels;
  attributes[0].val = data.splits.val.target_labels;
  attributes[0].test = data.splits.test.target_labels;
  attributes[0].n_classes = data.n_target_classes;
  attributes[1].name = "sensitive";
  attributes[1].train = data.splits.train.sensitive_labels;
  attributes[1].val = data.splits.val.sensitive_labels;
  attributes[1].test = data.splits.test.sensitive_labels;
  attributes[1].n_classes = data.n_sensitive_classes;
  const auto delta_rows = focal::delta_accuracy(emb, attributes, config.eval.probe,
                                                focal::derive_seed(config.seed, 0xde17a));
  {
    std::ofstream out = open_output(dir / "delta_accuracy.csv");
    out << "attribute,acc_target_embedding,acc_residual_embedding,delta,normalized_target,"
           "normalized_residual\n";
    for (const auto& row : delta_rows)
      out << row.attribute << ',' << focal::format_double(row.acc_target) << ','
          << focal::format_double(row.acc_residual) << ',' << focal::format_double(row.delta)
          << ',' << focal::format_double(row.normalized_target) << ','
          << focal::format_double(row.normalized_residual) << '\n';
  }
  json delta_json;
  for (const auto& row : delta_rows)
    delta_json[row.attribute] = {{"acc_target_embedding", row.acc_target},
                                 {"acc_residual_embedding", row.acc_residual},
                                 {"delta", row.delta}};
  summary["delta_accuracy"] = delta_json;

  if (config.eval.fairness && data.n_target_classes == 2 && data.n_sensitive_classes == 2) {
    const focal::ProbeData pd{emb.tar_train,
                              emb.tar_val,
                              emb.tar_test,
                              data.splits.train.target_labels,
                              data.splits.val.target_labels,
                              data.splits.test.target_labels,
                              2};
    const focal::FairnessReport fr =
        focal::fairness_from_probe(pd, config.eval.probe, focal::derive_seed(config.seed, 0x92),
                                   data.splits.test.sensitive_labels, config.eval.eod_mode);
    std::ofstream out = open_output(dir / "fairness.csv");
    out << "dp_gap,eod_gap,eod_mode,positive_rate_0,positive_rate_1,tpr_0,tpr_1,fpr_0,fpr_1\n"
        << focal::format_double(fr.dp_gap) << ',' << focal::format_double(fr.eod_gap) << ','
        << (fr.mode == focal::EodMode::Max ? "max" : "mean") << ','
        << focal::format_double(fr.positive_rate[0]) << ','
        << focal::format_double(fr.positive_rate[1]) << ',' << focal::format_double(fr.tpr[0])
        << ',' << focal::format_double(fr.tpr[1]) << ',' << focal::format_double(fr.fpr[0]) << ','
        << focal::format_double(fr.fpr[1]) << '\n';
    summary["fairness"] = {{"dp_gap", fr.dp_gap},
                           {"eod_gap", fr.eod_gap},
                           {"eod_mode", fr.mode == focal::EodMode::Max ? "max" : "mean"}};
  } else {
    summary["fairness"] = "disabled";
  }

  write_text_file(dir / "report_summary.json", summary.dump(2) + "\n");
  std::printf("report written to %s\n", dir.string().c_str());
  return 0;
}

template <class F>
int guarded(F&& f) {
  try {
    return f();
  } catch (const focal::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const focal::IoError& e) {
    std::fprintf(stderr, "i/o error: %s\n", e.what());
    return 3;
  } catch (const focal::NumericError& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return 4;
  } catch (const focal::ArtifactError& e) {
    std::fprintf(stderr, "artifact mismatch: %s\n", e.what());
    return 5;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"focal-sanitizer: focal-entropy adversarial representation learning"};
  app.require_subcommand(1);

  CommonOptions opts;
  std::string dataset_file, grid_spec, capacity, checkpoint_path;
  std::size_t parallel = 1;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", opts.config_path, "experiment config JSON")->required();
    cmd->add_option("--seed", opts.seed, "seed override (also via FOCAL_SANITIZER_SEED)");
    cmd->add_option("--out", opts.out_dir, "output directory override");
    cmd->add_option("--mode", opts.mode,
                    "sanitization mode override: focal_kl_tau | focal_split | maxent_uniform");
  };

  CLI::App* gen = app.add_subcommand("gen-data", "generate and cache the synthetic dataset");
  add_common(gen);
  gen->add_option("--dataset-file", dataset_file,
                  "dataset cache path (default <out>/dataset.bin)");

  CLI::App* train_cmd = app.add_subcommand("train", "run the two-phase training");
  add_common(train_cmd);

  CLI::App* probe_cmd = app.add_subcommand("probe", "train probing classifiers on a checkpoint");
  add_common(probe_cmd);
  probe_cmd->add_option("--capacity", capacity, "normal | strong | both");
  probe_cmd->add_option("--checkpoint", checkpoint_path, "checkpoint path override");

  CLI::App* sweep_cmd = app.add_subcommand("sweep", "grid search / trade-off sweep");
  add_common(sweep_cmd);
  sweep_cmd->add_option("--grid", grid_spec, "e.g. beta_S=0,0.5,1;alpha_T=1")->required();
  sweep_cmd->add_option("--parallel", parallel, "worker threads (default 1)");

  CLI::App* report_cmd = app.add_subcommand("report", "consolidated analyses for a finished run");
  add_common(report_cmd);

  CLI11_PARSE(app, argc, argv);

  if (gen->parsed()) return guarded([&] { return cmd_gen_data(opts, dataset_file); });
  if (train_cmd->parsed()) return guarded([&] { return cmd_train(opts); });
  if (probe_cmd->parsed())
    return guarded([&] { return cmd_probe(opts, capacity, checkpoint_path); });
  if (sweep_cmd->parsed()) return guarded([&] { return cmd_sweep(opts, grid_spec, parallel); });
  if (report_cmd->parsed()) return guarded([&] { return cmd_report(opts); });
  return 1;
}
