// Post-hoc evaluation: probing classifiers on frozen embeddings, fairness
// gaps, attribute-level delta accuracy, hub-graph analysis, and embedding
// export. Probes never mutate the encoder.
#pragma once

#include <algorithm>
#include <cstdio>
#include <map>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "focal/adam.hpp"
#include "focal/dataset.hpp"
#include "focal/errors.hpp"
#include "focal/losses.hpp"
#include "focal/nn.hpp"
#include "focal/rng.hpp"

namespace focal {

// Shortest exact decimal round-trip for CSV output.
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

enum class ProbeCapacity { Normal, Strong };

inline const char* to_string(ProbeCapacity c) {
  return c == ProbeCapacity::Normal ? "normal" : "strong";
}

struct ProbeReport {
  std::string embedding_kind;  // "target" | "residual"
  std::string label_kind;      // "target" | "sensitive" | attribute name
  ProbeCapacity capacity = ProbeCapacity::Normal;
  double train_accuracy = 0.0;
  double val_accuracy = 0.0;
  double test_accuracy = 0.0;
  double chance_level = 0.0;
};

struct ProbeData {
  DenseMatrix train;
  DenseMatrix val;
  DenseMatrix test;
  std::vector<std::size_t> y_train;
  std::vector<std::size_t> y_val;
  std::vector<std::size_t> y_test;
  std::size_t n_classes = 0;
};

struct ProbeSettings {
  std::vector<std::size_t> hidden{64, 32};
  double learning_rate = 0.001;
  double weight_decay = 1e-4;
  std::size_t epochs = 100;
  std::size_t batch_size = 128;
  Activation activation = Activation::PRelu;
};

// The strong probe extends the hidden stack by another first-width layer,
// roughly doubling capacity.
inline std::vector<std::size_t> strong_hidden(const std::vector<std::size_t>& normal) {
  std::vector<std::size_t> out = normal;
  if (!normal.empty()) out.push_back(normal.front());
  return out;
}

namespace detail {

inline double accuracy_of(const Mlp& net, const DenseMatrix& x,
                          std::span<const std::size_t> labels) {
  if (x.rows == 0) return 0.0;
  const DenseMatrix logits = net.forward(x);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < logits.rows; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < logits.cols; ++j)
      if (logits.at(i, j) > logits.at(i, best)) best = j;
    if (best == labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(x.rows);
}

}  // namespace detail

struct TrainedProbe {
  Mlp net;
  ProbeReport report;
};

// Trains a fresh classifier on the train split, keeps the epoch with the best
// validation accuracy, and reports the selected model on all three splits.
// Dropout stays off during probing.
inline TrainedProbe train_probe_model(const ProbeData& data, ProbeCapacity capacity,
                                      const ProbeSettings& settings, std::uint64_t seed) {
  if (data.train.rows == 0) throw std::invalid_argument("train_probe: empty training split");
  if (data.n_classes == 0) throw std::invalid_argument("train_probe: n_classes must be >= 1");
  std::vector<bool> present(data.n_classes, false);
  for (std::size_t y : data.y_train) present.at(y) = true;
  for (std::size_t cls = 0; cls < data.n_classes; ++cls)
    if (!present[cls])
      throw std::invalid_argument("train_probe: class " + std::to_string(cls) +
                                  " absent from training labels");

  MlpSpec spec;
  spec.input_dim = data.train.cols;
  spec.hidden_dims =
      capacity == ProbeCapacity::Normal ? settings.hidden : strong_hidden(settings.hidden);
  spec.output_dim = data.n_classes;
  spec.activation = settings.activation;
  spec.dropout_rate = 0.0;

  Rng init(derive_seed(seed, 0x51));
  Rng shuffler(derive_seed(seed, 0x52));
  Mlp net(spec, init);
  AdamState opt(net.param_count(), settings.learning_rate, settings.weight_decay);

  std::vector<double> best_params = net.params();
  double best_val = -1.0;
  std::vector<std::size_t> order(data.train.rows);
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  std::vector<double> grads(net.param_count());
  for (std::size_t epoch = 0; epoch < settings.epochs; ++epoch) {
    shuffler.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += settings.batch_size) {
      const std::size_t end = std::min(order.size(), start + settings.batch_size);
      DenseMatrix batch(end - start, data.train.cols);
      std::vector<std::size_t> labels(end - start);
      for (std::size_t i = start; i < end; ++i) {
        std::copy(data.train.row(order[i]), data.train.row(order[i]) + data.train.cols,
                  batch.row(i - start));
        labels[i - start] = data.y_train[order[i]];
      }
      MlpCache cache;
      const DenseMatrix logits = net.forward(batch, &cache, true, nullptr);
      LossGrad ce = softmax_cross_entropy(logits, labels);
      std::fill(grads.begin(), grads.end(), 0.0);
      net.backward(cache, ce.grad, &grads);
      adam_step(net.params(), grads, opt);
    }
    const double val_acc = data.val.rows > 0 ? detail::accuracy_of(net, data.val, data.y_val)
                                             : static_cast<double>(epoch + 1);
    if (val_acc > best_val) {
      best_val = val_acc;
      best_params = net.params();
    }
  }
  net.params() = best_params;

  ProbeReport report;
  report.capacity = capacity;
  report.train_accuracy = detail::accuracy_of(net, data.train, data.y_train);
  report.val_accuracy = data.val.rows > 0 ? detail::accuracy_of(net, data.val, data.y_val) : 0.0;
  report.test_accuracy =
      data.test.rows > 0 ? detail::accuracy_of(net, data.test, data.y_test) : 0.0;
  report.chance_level = 1.0 / static_cast<double>(data.n_classes);
  return TrainedProbe{std::move(net), std::move(report)};
}

inline ProbeReport train_probe(const ProbeData& data, ProbeCapacity capacity,
                               const ProbeSettings& settings, std::uint64_t seed) {
  return train_probe_model(data, capacity, settings, seed).report;
}

// ---------------------------------------------------------------------------
// Fairness gaps (binary task, binary sensitive attribute)
// ---------------------------------------------------------------------------

enum class EodMode { Max, Mean };

struct FairnessReport {
  double dp_gap = 0.0;
  double eod_gap = 0.0;
  double positive_rate[2] = {0.0, 0.0};
  double tpr[2] = {0.0, 0.0};
  double fpr[2] = {0.0, 0.0};
  EodMode mode = EodMode::Max;
};

inline FairnessReport fairness_gaps(std::span<const std::size_t> predictions,
                                    std::span<const std::size_t> truths,
                                    std::span<const std::size_t> sensitive,
                                    EodMode mode = EodMode::Max) {
  if (predictions.size() != truths.size() || truths.size() != sensitive.size())
    throw std::invalid_argument("fairness_gaps: length mismatch");
  std::size_t n[2] = {0, 0}, pred_pos[2] = {0, 0};
  std::size_t pos[2] = {0, 0}, neg[2] = {0, 0}, tp[2] = {0, 0}, fp[2] = {0, 0};
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (predictions[i] > 1 || truths[i] > 1 || sensitive[i] > 1)
      throw std::invalid_argument("fairness_gaps: values must be binary");
    const std::size_t g = sensitive[i];
    ++n[g];
    pred_pos[g] += predictions[i];
    if (truths[i] == 1) {
      ++pos[g];
      tp[g] += predictions[i];
    } else {
      ++neg[g];
      fp[g] += predictions[i];
    }
  }
  for (int g = 0; g < 2; ++g)
    if (n[g] == 0)
      throw std::invalid_argument("fairness_gaps: sensitive group " + std::to_string(g) +
                                  " is absent");

  FairnessReport report;
  report.mode = mode;
  for (int g = 0; g < 2; ++g) {
    report.positive_rate[g] = static_cast<double>(pred_pos[g]) / static_cast<double>(n[g]);
    if (pos[g] == 0)
      throw std::invalid_argument("fairness_gaps: undefined rate TPR for group " +
                                  std::to_string(g) + " (no positive examples)");
    if (neg[g] == 0)
      throw std::invalid_argument("fairness_gaps: undefined rate FPR for group " +
                                  std::to_string(g) + " (no negative examples)");
    report.tpr[g] = static_cast<double>(tp[g]) / static_cast<double>(pos[g]);
    report.fpr[g] = static_cast<double>(fp[g]) / static_cast<double>(neg[g]);
  }
  report.dp_gap = std::abs(report.positive_rate[0] - report.positive_rate[1]);
  const double tpr_gap = std::abs(report.tpr[0] - report.tpr[1]);
  const double fpr_gap = std::abs(report.fpr[0] - report.fpr[1]);
  report.eod_gap = mode == EodMode::Max ? std::max(tpr_gap, fpr_gap) : 0.5 * (tpr_gap + fpr_gap);
  return report;
}

inline std::vector<std::size_t> argmax_predictions(const Mlp& net, const DenseMatrix& x) {
  const DenseMatrix logits = net.forward(x);
  std::vector<std::size_t> out(logits.rows);
  for (std::size_t i = 0; i < logits.rows; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < logits.cols; ++j)
      if (logits.at(i, j) > logits.at(i, best)) best = j;
    out[i] = best;
  }
  return out;
}

// Fairness of a freshly trained downstream probe's test predictions.
inline FairnessReport fairness_from_probe(const ProbeData& data, const ProbeSettings& settings,
                                          std::uint64_t seed,
                                          std::span<const std::size_t> test_sensitive,
                                          EodMode mode) {
  const TrainedProbe probe = train_probe_model(data, ProbeCapacity::Normal, settings, seed);
  const std::vector<std::size_t> predictions = argmax_predictions(probe.net, data.test);
  return fairness_gaps(predictions, data.y_test, test_sensitive, mode);
}

// ---------------------------------------------------------------------------
// Hub graph of adversarial remapping
// ---------------------------------------------------------------------------

struct HubGraph {
  std::size_t n_classes = 0;
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> edges;  // (u,v) -> multiplicity

  double average_out_degree() const {
    return static_cast<double>(edges.size()) / static_cast<double>(n_classes);
  }

  // Distinct in-edges per node.
  std::vector<std::size_t> in_degrees() const {
    std::vector<std::size_t> deg(n_classes, 0);
    for (const auto& [edge, count] : edges) ++deg[edge.second];
    return deg;
  }

  std::size_t hub_count(std::size_t threshold = 4) const {
    std::size_t hubs = 0;
    for (std::size_t d : in_degrees())
      if (d >= threshold) ++hubs;
    return hubs;
  }
};

// Edge u -> v when some example of true sensitive class u is adversarially
// predicted as v; identity edges are kept.
inline HubGraph hub_graph(const SplitEncoder& encoder, const Mlp& adversary_sensitive,
                          const LabeledDataset& data) {
  DenseMatrix z_tar, z_res;
  encoder.encode(data.features, z_tar, z_res);
  const DenseMatrix logits = adversary_sensitive.forward(z_tar);
  HubGraph graph;
  graph.n_classes = data.n_sensitive_classes;
  for (std::size_t i = 0; i < logits.rows; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < logits.cols; ++j)
      if (logits.at(i, j) > logits.at(i, best)) best = j;
    ++graph.edges[{data.sensitive_labels[i], best}];
  }
  return graph;
}

// ---------------------------------------------------------------------------
// Attribute-level delta accuracy
// ---------------------------------------------------------------------------

struct AttributeLabels {
  std::string name;
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
  std::size_t n_classes = 0;
};

struct DeltaAccuracyRow {
  std::string attribute;
  double acc_target = 0.0;    // probe on z_tar
  double acc_residual = 0.0;  // probe on z_res
  double delta = 0.0;
  double normalized_target = 0.0;    // accuracy minus majority-class frequency
  double normalized_residual = 0.0;
};

struct EmbeddingSplits {
  DenseMatrix tar_train, tar_val, tar_test;
  DenseMatrix res_train, res_val, res_test;
};

inline EmbeddingSplits encode_splits(const SplitEncoder& encoder, const DatasetSplits& splits) {
  EmbeddingSplits out;
  encoder.encode(splits.train.features, out.tar_train, out.res_train);
  if (splits.val.size() > 0) encoder.encode(splits.val.features, out.tar_val, out.res_val);
  if (splits.test.size() > 0) encoder.encode(splits.test.features, out.tar_test, out.res_test);
  return out;
}

inline std::vector<DeltaAccuracyRow> delta_accuracy(const EmbeddingSplits& embeddings,
                                                    std::span<const AttributeLabels> attributes,
                                                    const ProbeSettings& settings,
                                                    std::uint64_t seed) {
  if (attributes.empty()) throw std::invalid_argument("delta_accuracy: needs >= 1 attribute");
  std::vector<DeltaAccuracyRow> rows;
  std::size_t index = 0;
  for (const AttributeLabels& attr : attributes) {
    auto probe_on = [&](const DenseMatrix& train, const DenseMatrix& val,
                        const DenseMatrix& test, std::uint64_t salt) {
      ProbeData data{train, val, test, attr.train, attr.val, attr.test, attr.n_classes};
      return train_probe(data, ProbeCapacity::Normal, settings, derive_seed(seed, salt));
    };
    const ProbeReport on_target = probe_on(embeddings.tar_train, embeddings.tar_val,
                                           embeddings.tar_test, 2 * index);
    const ProbeReport on_residual = probe_on(embeddings.res_train, embeddings.res_val,
                                             embeddings.res_test, 2 * index + 1);

    std::vector<std::size_t> counts(attr.n_classes, 0);
    for (std::size_t y : attr.test) ++counts[y];
    const double majority =
        attr.test.empty() ? 0.0
                          : static_cast<double>(*std::max_element(counts.begin(), counts.end())) /
                                static_cast<double>(attr.test.size());

    DeltaAccuracyRow row;
    row.attribute = attr.name;
    row.acc_target = on_target.test_accuracy;
    row.acc_residual = on_residual.test_accuracy;
    row.delta = row.acc_target - row.acc_residual;
    row.normalized_target = row.acc_target - majority;
    row.normalized_residual = row.acc_residual - majority;
    rows.push_back(row);
    ++index;
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Embedding export
// ---------------------------------------------------------------------------

// Columns: example_id, split, target_label, sensitive_label, z_tar_*, z_res_*.
inline void export_embeddings(const SplitEncoder& encoder, const DatasetSplits& splits,
                              std::ostream& out) {
  const std::size_t d_tar = encoder.target_dim();
  const std::size_t d_res = encoder.residual_dim();
  std::vector<std::string> header{"example_id", "split", "target_label", "sensitive_label"};
  for (std::size_t j = 0; j < d_tar; ++j) header.push_back("z_tar_" + std::to_string(j));
  for (std::size_t j = 0; j < d_res; ++j) header.push_back("z_res_" + std::to_string(j));
  csv::write_row(out, header);

  const std::pair<const LabeledDataset*, const char*> parts[] = {
      {&splits.train, "train"}, {&splits.val, "val"}, {&splits.test, "test"}};
  for (const auto& [part, name] : parts) {
    if (part->size() == 0) continue;
    DenseMatrix z_tar, z_res;
    encoder.encode(part->features, z_tar, z_res);
    for (std::size_t i = 0; i < part->size(); ++i) {
      std::vector<std::string> row{std::to_string(part->example_ids[i]), name,
                                   std::to_string(part->target_labels[i]),
                                   std::to_string(part->sensitive_labels[i])};
      for (std::size_t j = 0; j < d_tar; ++j) row.push_back(format_double(z_tar.at(i, j)));
      for (std::size_t j = 0; j < d_res; ++j) row.push_back(format_double(z_res.at(i, j)));
      csv::write_row(out, row);
    }
  }
}

}  // namespace focal
