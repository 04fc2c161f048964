// Experiment orchestration: dataset preparation, the train+probe pipeline,
// grid search and trade-off sweeps, and the CSV/JSON artifact writers.
#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <limits>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "focal/config.hpp"
#include "focal/eval.hpp"
#include "focal/game.hpp"

namespace focal {

struct PreparedData {
  DatasetSplits splits;
  std::size_t input_dim = 0;
  std::size_t n_target_classes = 0;
  std::size_t n_sensitive_classes = 0;
  std::vector<std::string> sensitive_class_names;  // tabular datasets only
  std::size_t dropped_rows = 0;
};

inline LabeledDataset build_dataset(const ExperimentConfig& config,
                                    std::vector<std::string>* sensitive_names,
                                    std::size_t* dropped_rows) {
  if (config.dataset.kind == DatasetKind::Synthetic) {
    SyntheticSpec spec = config.dataset.synthetic;
    if (!config.dataset.synthetic_seed_set) spec.seed = config.seed;
    return generate_hierarchical_gaussian(spec);
  }
  TabularLoadResult loaded = load_tabular_csv(config.dataset.csv_path, config.dataset.schema);
  if (sensitive_names) *sensitive_names = loaded.sensitive_class_names;
  if (dropped_rows) *dropped_rows = loaded.dropped_rows;
  return std::move(loaded.dataset);
}

inline PreparedData prepare_data(const ExperimentConfig& config) {
  PreparedData out;
  const LabeledDataset full =
      build_dataset(config, &out.sensitive_class_names, &out.dropped_rows);
  out.input_dim = full.features.cols;
  out.n_target_classes = full.n_target_classes;
  out.n_sensitive_classes = full.n_sensitive_classes;
  if (config.partition_mode == PartitionMode::ModelTopK &&
      config.sanitize_mode != SanitizeMode::MaxentUniform &&
      (config.k < 1 || config.k >= full.n_sensitive_classes))
    throw ConfigError("game.k: must satisfy 1 <= k <= N-1 (N = " +
                      std::to_string(full.n_sensitive_classes) + ")");

  out.splits = split(full, config.dataset.fractions, derive_seed(config.seed, 0x5150));
  if (config.dataset.standardize) {
    // Synthetic features are all raw; tabular one-hot blocks are left alone.
    std::vector<std::size_t> columns;
    if (config.dataset.kind == DatasetKind::Synthetic) {
      for (std::size_t c = 0; c < out.input_dim; ++c) columns.push_back(c);
    } else {
      for (std::size_t c = 0; c < config.dataset.schema.numeric_columns.size(); ++c)
        columns.push_back(c);
    }
    if (!columns.empty()) {
      const Standardizer st = Standardizer::fit(out.splits.train.features, columns);
      st.apply(out.splits.train.features);
      st.apply(out.splits.val.features);
      st.apply(out.splits.test.features);
    }
  }
  return out;
}

inline TrainRunSettings to_run_settings(const ExperimentConfig& config) {
  TrainRunSettings settings;
  settings.arch = config.arch;
  settings.weights = config.weights;
  settings.schedule = config.schedule;
  settings.schedule.seed = config.seed;
  settings.sanitize_mode = config.sanitize_mode;
  settings.partition_mode = config.partition_mode;
  settings.k = config.k;
  return settings;
}

inline TrainState run_training(const ExperimentConfig& config, const PreparedData& data,
                               const EpochCallback& on_epoch = {}) {
  return train(data.splits.train, to_run_settings(config), on_epoch);
}

// ---------------------------------------------------------------------------
// Probe suites
// ---------------------------------------------------------------------------

inline std::vector<ProbeCapacity> capacities_from_string(const std::string& s) {
  if (s == "normal") return {ProbeCapacity::Normal};
  if (s == "strong") return {ProbeCapacity::Strong};
  if (s == "both") return {ProbeCapacity::Normal, ProbeCapacity::Strong};
  if (s == "none") return {};
  throw ConfigError("probe capacities: expected none | normal | strong | both");
}

// The four probes per capacity: {z_tar, z_res} x {target, sensitive}.
inline std::vector<ProbeReport> run_probes(const TrainState& state, const DatasetSplits& splits,
                                           const ProbeSettings& settings,
                                           const std::vector<ProbeCapacity>& capacities,
                                           std::uint64_t seed) {
  const EmbeddingSplits emb = encode_splits(state.encoder, splits);
  std::vector<ProbeReport> reports;
  std::uint64_t salt = 0;
  for (ProbeCapacity capacity : capacities) {
    for (const bool target_embedding : {true, false}) {
      for (const bool target_label : {true, false}) {
        ProbeData data;
        data.train = target_embedding ? emb.tar_train : emb.res_train;
        data.val = target_embedding ? emb.tar_val : emb.res_val;
        data.test = target_embedding ? emb.tar_test : emb.res_test;
        data.y_train = target_label ? splits.train.target_labels : splits.train.sensitive_labels;
        data.y_val = target_label ? splits.val.target_labels : splits.val.sensitive_labels;
        data.y_test = target_label ? splits.test.target_labels : splits.test.sensitive_labels;
        data.n_classes =
            target_label ? splits.train.n_target_classes : splits.train.n_sensitive_classes;
        ProbeReport report = train_probe(data, capacity, settings, derive_seed(seed, 0x70 + salt));
        report.embedding_kind = target_embedding ? "target" : "residual";
        report.label_kind = target_label ? "target" : "sensitive";
        reports.push_back(std::move(report));
        ++salt;
      }
    }
  }
  return reports;
}

inline const ProbeReport* find_probe(const std::vector<ProbeReport>& reports,
                                     const std::string& embedding, const std::string& label,
                                     ProbeCapacity capacity) {
  for (const ProbeReport& r : reports)
    if (r.embedding_kind == embedding && r.label_kind == label && r.capacity == capacity)
      return &r;
  return nullptr;
}

// ---------------------------------------------------------------------------
// Grid search and trade-off sweep
// ---------------------------------------------------------------------------

struct GridAxis {
  std::string name;  // alpha_T | alpha_S | beta_T | beta_S | recon | k
  std::vector<double> values;
};

struct GridPoint {
  std::vector<std::pair<std::string, double>> assignments;
};

inline std::vector<GridPoint> cartesian(const std::vector<GridAxis>& axes) {
  if (axes.empty()) throw ConfigError("grid: empty grid");
  for (const GridAxis& axis : axes)
    if (axis.values.empty()) throw ConfigError("grid: axis '" + axis.name + "' has no values");
  std::vector<GridPoint> points{GridPoint{}};
  for (const GridAxis& axis : axes) {
    std::vector<GridPoint> next;
    for (const GridPoint& base : points)
      for (double v : axis.values) {
        GridPoint p = base;
        p.assignments.emplace_back(axis.name, v);
        next.push_back(std::move(p));
      }
    points = std::move(next);
  }
  return points;
}

inline void apply_assignment(ExperimentConfig& config, const std::string& name, double value) {
  if (name == "alpha_T") config.weights.alpha_T = value;
  else if (name == "alpha_S") config.weights.alpha_S = value;
  else if (name == "beta_T") config.weights.beta_T = value;
  else if (name == "beta_S") config.weights.beta_S = value;
  else if (name == "recon") config.weights.recon = value;
  else if (name == "k") config.k = static_cast<std::size_t>(value);
  else throw ConfigError("grid: unknown parameter '" + name + "'");
}

struct GridRowResult {
  std::size_t index = 0;
  GridPoint point;
  bool ok = false;
  std::string error;
  double target_accuracy = 0.0;
  double adversarial_accuracy = 0.0;
  double ratio = 0.0;  // target / adversarial, the selection criterion
  double dp_gap = -1.0;
  double eod_gap = -1.0;  // < 0 means not computed
};

// One train+probe run per grid point; per-point failures are recorded, the
// sweep itself never aborts. Seeds derive from (base seed, grid index).
inline std::vector<GridRowResult> grid_search(const ExperimentConfig& base,
                                              const std::vector<GridAxis>& axes,
                                              std::size_t parallelism = 1) {
  const std::vector<GridPoint> points = cartesian(axes);
  const PreparedData data = prepare_data(base);

  std::vector<GridRowResult> results(points.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= points.size()) return;
      GridRowResult& row = results[i];
      row.index = i;
      row.point = points[i];
      try {
        ExperimentConfig config = base;
        for (const auto& [name, value] : points[i].assignments)
          apply_assignment(config, name, value);
        config.seed = derive_seed(base.seed, i);
        config.weights.validate();

        const TrainState state = run_training(config, data);
        const std::vector<ProbeReport> probes = run_probes(
            state, data.splits, config.eval.probe, {ProbeCapacity::Normal}, config.seed);
        const ProbeReport* target = find_probe(probes, "target", "target", ProbeCapacity::Normal);
        const ProbeReport* adv = find_probe(probes, "target", "sensitive", ProbeCapacity::Normal);
        row.target_accuracy = target->test_accuracy;
        row.adversarial_accuracy = adv->test_accuracy;
        row.ratio = row.target_accuracy / std::max(row.adversarial_accuracy, 1e-12);

        if (config.eval.fairness && data.n_target_classes == 2 &&
            data.n_sensitive_classes == 2) {
          const EmbeddingSplits emb = encode_splits(state.encoder, data.splits);
          const ProbeData pd{emb.tar_train,
                             emb.tar_val,
                             emb.tar_test,
                             data.splits.train.target_labels,
                             data.splits.val.target_labels,
                             data.splits.test.target_labels,
                             2};
          const FairnessReport fr =
              fairness_from_probe(pd, config.eval.probe, derive_seed(config.seed, 0x92),
                                  data.splits.test.sensitive_labels, config.eval.eod_mode);
          row.dp_gap = fr.dp_gap;
          row.eod_gap = fr.eod_gap;
        }
        row.ok = true;
      } catch (const std::exception& e) {
        row.ok = false;
        row.error = e.what();
      }
    }
  };

  if (parallelism <= 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    for (std::size_t t = 0; t < parallelism; ++t) threads.emplace_back(worker);
    for (std::thread& t : threads) t.join();
  }
  return results;
}

// Curve over a single beta_S grid: rows in input order (duplicates kept),
// sorted ascending by beta.
struct TradeoffRow {
  double beta = 0.0;
  bool ok = false;
  std::string error;
  double target_accuracy = 0.0;
  double adversarial_accuracy = 0.0;
};

inline std::vector<TradeoffRow> tradeoff_sweep(const ExperimentConfig& base,
                                               const std::vector<double>& beta_values,
                                               std::size_t parallelism = 1) {
  if (beta_values.empty()) throw ConfigError("tradeoff_sweep: empty grid");
  const std::vector<GridRowResult> grid =
      grid_search(base, {GridAxis{"beta_S", beta_values}}, parallelism);
  std::vector<TradeoffRow> rows;
  for (const GridRowResult& r : grid) {
    TradeoffRow row;
    row.beta = r.point.assignments.front().second;
    row.ok = r.ok;
    row.error = r.error;
    row.target_accuracy = r.target_accuracy;
    row.adversarial_accuracy = r.adversarial_accuracy;
    rows.push_back(row);
  }
  std::stable_sort(rows.begin(), rows.end(),
                   [](const TradeoffRow& a, const TradeoffRow& b) { return a.beta < b.beta; });
  return rows;
}

// ---------------------------------------------------------------------------
// Artifact writers
// ---------------------------------------------------------------------------

inline void write_metrics_header(std::ostream& out) {
  out << "phase,epoch,loss_total,loss_target,loss_sensitive,loss_adv_T,loss_adv_S,loss_recon,"
         "acc_target_train,acc_sensitive_adv_train\n";
}

inline void write_metrics_row(std::ostream& out, const EpochMetrics& m) {
  out << to_string(m.phase) << ',' << m.epoch << ',' << format_double(m.loss_total) << ','
      << format_double(m.loss_target) << ',' << format_double(m.loss_sensitive) << ','
      << format_double(m.loss_adv_T) << ',' << format_double(m.loss_adv_S) << ','
      << format_double(m.loss_recon) << ',' << format_double(m.acc_target_train) << ','
      << format_double(m.acc_sensitive_adv_train) << '\n';
}

inline void write_probes_csv(std::ostream& out, std::span<const ProbeReport> reports) {
  out << "embedding,label,capacity,train_accuracy,val_accuracy,test_accuracy,chance_level\n";
  for (const ProbeReport& r : reports)
    out << r.embedding_kind << ',' << r.label_kind << ',' << to_string(r.capacity) << ','
        << format_double(r.train_accuracy) << ',' << format_double(r.val_accuracy) << ','
        << format_double(r.test_accuracy) << ',' << format_double(r.chance_level) << '\n';
}

inline std::string grid_point_label(const GridPoint& point) {
  std::string label;
  for (const auto& [name, value] : point.assignments) {
    if (!label.empty()) label += ' ';
    label += name + "=" + format_double(value);
  }
  return label;
}

// Table sorted by the selection criterion (target/adversarial ratio).
inline void write_grid_csv(std::ostream& out, std::vector<GridRowResult> rows) {
  std::stable_sort(rows.begin(), rows.end(), [](const GridRowResult& a, const GridRowResult& b) {
    if (a.ok != b.ok) return a.ok;
    return a.ratio > b.ratio;
  });
  out << "rank,grid_index,point,status,target_accuracy,adversarial_accuracy,ratio,dp_gap,eod_gap\n";
  std::size_t rank = 1;
  for (const GridRowResult& r : rows) {
    const std::string status = r.ok ? "ok" : "error: " + r.error;
    out << rank++ << ',' << r.index << ',' << csv::escape(grid_point_label(r.point)) << ','
        << csv::escape(status) << ',' << format_double(r.target_accuracy) << ','
        << format_double(r.adversarial_accuracy) << ',' << format_double(r.ratio) << ','
        << (r.dp_gap < 0 ? "" : format_double(r.dp_gap)) << ','
        << (r.eod_gap < 0 ? "" : format_double(r.eod_gap)) << '\n';
  }
}

inline void write_curve_csv(std::ostream& out, std::span<const TradeoffRow> rows) {
  out << "beta_S,status,target_accuracy,adversarial_accuracy\n";
  for (const TradeoffRow& r : rows)
    out << format_double(r.beta) << ',' << (r.ok ? "ok" : "error") << ','
        << format_double(r.target_accuracy) << ',' << format_double(r.adversarial_accuracy)
        << '\n';
}

inline nlohmann::json train_summary(const ExperimentConfig& config, const TrainState& state,
                                    const PreparedData& data) {
  nlohmann::json summary;
  summary["seed"] = config.seed;
  summary["sanitize_mode"] = to_string(config.sanitize_mode);
  summary["partition_mode"] = to_string(config.partition_mode);
  summary["k"] = config.k;
  summary["n_target_classes"] = data.n_target_classes;
  summary["n_sensitive_classes"] = data.n_sensitive_classes;
  summary["chance_target"] = 1.0 / static_cast<double>(data.n_target_classes);
  summary["chance_sensitive"] = 1.0 / static_cast<double>(data.n_sensitive_classes);
  summary["rows_train"] = data.splits.train.size();
  summary["rows_val"] = data.splits.val.size();
  summary["rows_test"] = data.splits.test.size();
  summary["epochs_total"] = state.epoch;
  if (!state.history.empty()) {
    const EpochMetrics& last = state.history.back();
    summary["final"] = {{"phase", to_string(last.phase)},
                        {"loss_total", last.loss_total},
                        {"loss_target", last.loss_target},
                        {"loss_sensitive", last.loss_sensitive},
                        {"loss_adv_T", last.loss_adv_T},
                        {"loss_adv_S", last.loss_adv_S},
                        {"loss_recon", last.loss_recon},
                        {"acc_target_train", last.acc_target_train},
                        {"acc_sensitive_adv_train", last.acc_sensitive_adv_train}};
  }
  return summary;
}

}  // namespace focal
