// The multi-player adversarial optimization: alternating adversary/encoder
// updates over minibatches, with a utility-only warm-up phase followed by the
// sanitizing burn-in phase.
//
// Adversaries minimize cross-entropy on true labels against frozen
// embeddings; the encoder (plus predictors) minimizes its utility terms and
// the entropy-based sanitization terms against frozen adversaries.
#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "focal/adam.hpp"
#include "focal/dataset.hpp"
#include "focal/errors.hpp"
#include "focal/losses.hpp"
#include "focal/nn.hpp"
#include "focal/partition.hpp"
#include "focal/rng.hpp"
#include "focal/similarity.hpp"

namespace focal {

enum class SanitizeMode { FocalKlTau, FocalSplit, MaxentUniform };
enum class PartitionMode { Labels, ModelTopK };

inline const char* to_string(SanitizeMode m) {
  switch (m) {
    case SanitizeMode::FocalKlTau:
      return "focal_kl_tau";
    case SanitizeMode::FocalSplit:
      return "focal_split";
    case SanitizeMode::MaxentUniform:
      return "maxent_uniform";
  }
  return "?";
}

inline const char* to_string(PartitionMode m) {
  return m == PartitionMode::Labels ? "labels" : "model_topk";
}

struct GameWeights {
  double alpha_T = 1.0;
  double alpha_S = 1.0;
  double beta_T = 0.0;
  double beta_S = 0.0;
  double recon = 0.0;

  void validate() const {
    for (double w : {alpha_T, alpha_S, beta_T, beta_S, recon})
      if (!(w >= 0.0)) throw ConfigError("game weights must be >= 0");
  }
};

struct TrainSchedule {
  std::size_t warmup_epochs = 10;
  std::size_t burnin_epochs = 20;
  std::size_t batch_size = 128;
  double learning_rate = 0.001;
  double weight_decay = 1e-4;
  std::size_t adversary_steps = 1;  // adversary updates per encoder step
  std::uint64_t seed = 0;

  void validate() const {
    if (batch_size < 1) throw ConfigError("schedule: batch_size must be >= 1");
    if (!(learning_rate > 0.0)) throw ConfigError("schedule: learning_rate must be > 0");
    if (!(weight_decay >= 0.0)) throw ConfigError("schedule: weight_decay must be >= 0");
    if (adversary_steps < 1) throw ConfigError("schedule: adversary_steps must be >= 1");
  }
};

struct ArchitectureSpec {
  std::vector<std::size_t> trunk_hidden{128};
  std::size_t trunk_out = 64;
  std::vector<std::size_t> head_hidden{};
  std::size_t embedding_dim = 16;  // both embeddings use the same width
  std::vector<std::size_t> classifier_hidden{64, 32};
  std::vector<std::size_t> decoder_hidden{128};
  Activation activation = Activation::PRelu;
  double dropout = 0.0;

  MlpSpec trunk_spec(std::size_t input_dim) const {
    MlpSpec spec;
    spec.input_dim = input_dim;
    spec.hidden_dims = trunk_hidden;
    spec.output_dim = trunk_out;
    spec.activation = activation;
    spec.dropout_rate = dropout;
    spec.activate_output = true;
    return spec;
  }

  MlpSpec head_spec() const {
    MlpSpec spec;
    spec.input_dim = trunk_out;
    spec.hidden_dims = head_hidden;
    spec.output_dim = embedding_dim;
    spec.activation = activation;
    spec.dropout_rate = dropout;
    return spec;
  }

  MlpSpec classifier_spec(std::size_t input_dim, std::size_t n_classes) const {
    MlpSpec spec;
    spec.input_dim = input_dim;
    spec.hidden_dims = classifier_hidden;
    spec.output_dim = n_classes;
    spec.activation = activation;
    spec.dropout_rate = dropout;
    return spec;
  }

  MlpSpec decoder_spec(std::size_t input_dim) const {
    MlpSpec spec;
    spec.input_dim = 2 * embedding_dim;
    spec.hidden_dims = decoder_hidden;
    spec.output_dim = input_dim;
    spec.activation = activation;
    return spec;
  }
};

enum class Phase { Warmup, Burnin };

inline const char* to_string(Phase p) { return p == Phase::Warmup ? "warmup" : "burnin"; }

struct EpochMetrics {
  Phase phase = Phase::Warmup;
  std::size_t epoch = 0;
  double loss_total = 0.0;
  double loss_target = 0.0;
  double loss_sensitive = 0.0;
  double loss_adv_T = 0.0;
  double loss_adv_S = 0.0;
  double loss_recon = 0.0;
  double acc_target_train = 0.0;
  double acc_sensitive_adv_train = 0.0;
};

struct TrainState {
  SplitEncoder encoder;
  Mlp predictor_target;     // target classes from z_tar
  Mlp predictor_sensitive;  // sensitive classes from z_res
  Mlp adversary_target;     // target classes from z_res
  Mlp adversary_sensitive;  // sensitive classes from z_tar
  std::optional<Mlp> decoder;

  AdamState opt_trunk;
  AdamState opt_target_head;
  AdamState opt_residual_head;
  AdamState opt_predictor_target;
  AdamState opt_predictor_sensitive;
  AdamState opt_adversary_target;
  AdamState opt_adversary_sensitive;
  AdamState opt_decoder;

  std::size_t input_dim = 0;
  std::size_t n_target_classes = 0;
  std::size_t n_sensitive_classes = 0;
  std::size_t epoch = 0;
  std::vector<EpochMetrics> history;
  Rng rng{0};
};

inline TrainState init_train_state(std::size_t input_dim, std::size_t n_target_classes,
                                   std::size_t n_sensitive_classes, const ArchitectureSpec& arch,
                                   const TrainSchedule& schedule, bool with_decoder) {
  Rng init(derive_seed(schedule.seed, 0x11));
  TrainState state{
      SplitEncoder(arch.trunk_spec(input_dim), arch.head_spec(), arch.head_spec(), init),
      Mlp(arch.classifier_spec(arch.embedding_dim, n_target_classes), init),
      Mlp(arch.classifier_spec(arch.embedding_dim, n_sensitive_classes), init),
      Mlp(arch.classifier_spec(arch.embedding_dim, n_target_classes), init),
      Mlp(arch.classifier_spec(arch.embedding_dim, n_sensitive_classes), init),
      std::nullopt,
      AdamState{},
      AdamState{},
      AdamState{},
      AdamState{},
      AdamState{},
      AdamState{},
      AdamState{},
      AdamState{}};
  if (with_decoder) state.decoder.emplace(arch.decoder_spec(input_dim), init);

  const double lr = schedule.learning_rate;
  const double wd = schedule.weight_decay;
  state.opt_trunk = AdamState(state.encoder.trunk().param_count(), lr, wd);
  state.opt_target_head = AdamState(state.encoder.target_head().param_count(), lr, wd);
  state.opt_residual_head = AdamState(state.encoder.residual_head().param_count(), lr, wd);
  state.opt_predictor_target = AdamState(state.predictor_target.param_count(), lr, wd);
  state.opt_predictor_sensitive = AdamState(state.predictor_sensitive.param_count(), lr, wd);
  state.opt_adversary_target = AdamState(state.adversary_target.param_count(), lr, wd);
  state.opt_adversary_sensitive = AdamState(state.adversary_sensitive.param_count(), lr, wd);
  if (with_decoder) state.opt_decoder = AdamState(state.decoder->param_count(), lr, wd);

  state.input_dim = input_dim;
  state.n_target_classes = n_target_classes;
  state.n_sensitive_classes = n_sensitive_classes;
  state.rng = Rng(derive_seed(schedule.seed, 0x22));
  return state;
}

// ---------------------------------------------------------------------------
// Per-example peak distributions
// ---------------------------------------------------------------------------

// In label mode one tau per sensitive class suffices; in model mode the table
// holds one per training example and is refreshed once per epoch from the
// current adversary's detached output.
class FocalTargetTable {
 public:
  static FocalTargetTable from_labels(const LabelGrouping& grouping,
                                      std::size_t n_sensitive_classes) {
    FocalTargetTable table;
    table.per_example_ = false;
    table.targets_.reserve(n_sensitive_classes);
    for (std::size_t cls = 0; cls < n_sensitive_classes; ++cls)
      table.targets_.push_back(compute_tau(partition_from_labels(cls, grouping)));
    return table;
  }

  static FocalTargetTable from_adversary(const SplitEncoder& encoder, const Mlp& adversary,
                                         const DenseMatrix& features, std::size_t k) {
    DenseMatrix z_tar, z_res;
    encoder.encode(features, z_tar, z_res);
    const DenseMatrix logits = adversary.forward(z_tar);
    FocalTargetTable table;
    table.per_example_ = true;
    table.targets_.reserve(features.rows);
    ScoreVector scores(logits.cols);
    for (std::size_t i = 0; i < logits.rows; ++i) {
      scores.assign(logits.row(i), logits.row(i) + logits.cols);
      table.targets_.push_back(compute_tau(top_k_similar(scores, k)));
    }
    return table;
  }

  const FocalTarget* lookup(std::size_t example_row, std::size_t sensitive_label) const {
    return per_example_ ? &targets_[example_row] : &targets_[sensitive_label];
  }

 private:
  bool per_example_ = false;
  std::vector<FocalTarget> targets_;
};

// ---------------------------------------------------------------------------
// Steps
// ---------------------------------------------------------------------------

struct StepMetrics {
  double loss_target = 0.0;
  double loss_sensitive = 0.0;
  double loss_adv_T = 0.0;
  double loss_adv_S = 0.0;
  double loss_recon = 0.0;
  double loss_total = 0.0;
  std::size_t correct_target = 0;
  std::size_t correct_adv_sensitive = 0;
};

namespace detail {

inline DenseMatrix gather_rows(const DenseMatrix& src, std::span<const std::size_t> rows) {
  DenseMatrix out(rows.size(), src.cols);
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy(src.row(rows[i]), src.row(rows[i]) + src.cols, out.row(i));
  return out;
}

template <class T>
std::vector<T> gather(const std::vector<T>& values, std::span<const std::size_t> rows) {
  std::vector<T> out;
  out.reserve(rows.size());
  for (std::size_t r : rows) out.push_back(values[r]);
  return out;
}

inline std::size_t argmax_row(const DenseMatrix& m, std::size_t row) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < m.cols; ++j)
    if (m.at(row, j) > m.at(row, best)) best = j;
  return best;
}

inline std::size_t count_correct(const DenseMatrix& logits, std::span<const std::size_t> labels) {
  std::size_t correct = 0;
  for (std::size_t i = 0; i < logits.rows; ++i)
    if (argmax_row(logits, i) == labels[i]) ++correct;
  return correct;
}

inline void scale_grad(DenseMatrix& grad, double w) {
  for (double& g : grad.data) g *= w;
}

inline DenseMatrix concat_cols(const DenseMatrix& a, const DenseMatrix& b) {
  DenseMatrix out(a.rows, a.cols + b.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    std::copy(a.row(i), a.row(i) + a.cols, out.row(i));
    std::copy(b.row(i), b.row(i) + b.cols, out.row(i) + a.cols);
  }
  return out;
}

inline void train_classifier_step(Mlp& net, AdamState& opt, const DenseMatrix& input,
                                  std::span<const std::size_t> labels, Rng& rng, double& loss_out,
                                  DenseMatrix* logits_out = nullptr) {
  MlpCache cache;
  DenseMatrix logits = net.forward(input, &cache, true, &rng);
  LossGrad ce = softmax_cross_entropy(logits, labels);
  std::vector<double> grads(net.param_count(), 0.0);
  net.backward(cache, ce.grad, &grads);
  adam_step(net.params(), grads, opt);
  loss_out = ce.loss;
  if (logits_out) *logits_out = std::move(logits);
}

}  // namespace detail

// One pass of utility-only updates: encoder and predictors move, adversaries
// stay untouched.
inline StepMetrics warmup_step(TrainState& state, const DenseMatrix& batch,
                               std::span<const std::size_t> target_labels,
                               std::span<const std::size_t> sensitive_labels,
                               const GameWeights& weights) {
  SplitEncoder::Cache enc_cache;
  DenseMatrix z_tar, z_res;
  state.encoder.encode(batch, z_tar, z_res, &enc_cache, true, &state.rng);

  MlpCache pt_cache, ps_cache;
  DenseMatrix logits_t = state.predictor_target.forward(z_tar, &pt_cache, true, &state.rng);
  DenseMatrix logits_s = state.predictor_sensitive.forward(z_res, &ps_cache, true, &state.rng);
  LossGrad ce_t = softmax_cross_entropy(logits_t, target_labels);
  LossGrad ce_s = softmax_cross_entropy(logits_s, sensitive_labels);

  StepMetrics metrics;
  metrics.loss_target = ce_t.loss;
  metrics.loss_sensitive = ce_s.loss;
  metrics.correct_target = detail::count_correct(logits_t, target_labels);

  DenseMatrix grad_z_tar, grad_z_res;
  std::vector<double> g_pt(state.predictor_target.param_count(), 0.0);
  std::vector<double> g_ps(state.predictor_sensitive.param_count(), 0.0);
  if (weights.alpha_T > 0.0) {
    detail::scale_grad(ce_t.grad, weights.alpha_T);
    grad_z_tar = state.predictor_target.backward(pt_cache, ce_t.grad, &g_pt);
  }
  if (weights.alpha_S > 0.0) {
    detail::scale_grad(ce_s.grad, weights.alpha_S);
    grad_z_res = state.predictor_sensitive.backward(ps_cache, ce_s.grad, &g_ps);
  }

  // Optional reconstruction from the concatenated embeddings.
  std::vector<double> g_dec;
  if (state.decoder && weights.recon > 0.0) {
    MlpCache dec_cache;
    const DenseMatrix joint = detail::concat_cols(z_tar, z_res);
    DenseMatrix decoded = state.decoder->forward(joint, &dec_cache, true, &state.rng);
    LossGrad rec = mse_reconstruction_loss(decoded, batch);
    metrics.loss_recon = rec.loss;
    detail::scale_grad(rec.grad, weights.recon);
    g_dec.assign(state.decoder->param_count(), 0.0);
    DenseMatrix g_joint = state.decoder->backward(dec_cache, rec.grad, &g_dec);
    // Split the joint gradient back onto the two embeddings.
    const std::size_t d = z_tar.cols;
    if (grad_z_tar.rows == 0) grad_z_tar = DenseMatrix(z_tar.rows, d);
    if (grad_z_res.rows == 0) grad_z_res = DenseMatrix(z_res.rows, d);
    for (std::size_t i = 0; i < g_joint.rows; ++i)
      for (std::size_t j = 0; j < d; ++j) {
        grad_z_tar.at(i, j) += g_joint.at(i, j);
        grad_z_res.at(i, j) += g_joint.at(i, j + d);
      }
  }

  if (grad_z_tar.rows > 0 || grad_z_res.rows > 0) {
    std::vector<double> g_trunk(state.encoder.trunk().param_count(), 0.0);
    std::vector<double> g_th(state.encoder.target_head().param_count(), 0.0);
    std::vector<double> g_rh(state.encoder.residual_head().param_count(), 0.0);
    state.encoder.encode_backward(enc_cache, grad_z_tar, grad_z_res, &g_trunk, &g_th, &g_rh);
    adam_step(state.encoder.trunk().params(), g_trunk, state.opt_trunk);
    adam_step(state.encoder.target_head().params(), g_th, state.opt_target_head);
    adam_step(state.encoder.residual_head().params(), g_rh, state.opt_residual_head);
  }
  adam_step(state.predictor_target.params(), g_pt, state.opt_predictor_target);
  adam_step(state.predictor_sensitive.params(), g_ps, state.opt_predictor_sensitive);
  if (!g_dec.empty()) adam_step(state.decoder->params(), g_dec, state.opt_decoder);

  // Proxy accuracy of the (untouched) sensitive adversary on z_tar.
  const DenseMatrix adv_logits = state.adversary_sensitive.forward(z_tar);
  metrics.correct_adv_sensitive = detail::count_correct(adv_logits, sensitive_labels);

  metrics.loss_total = weights.alpha_T * metrics.loss_target +
                       weights.alpha_S * metrics.loss_sensitive +
                       weights.recon * metrics.loss_recon;
  return metrics;
}

// Adversaries fit the true labels on frozen embeddings; the encoder and
// predictors are bit-identical before and after.
inline StepMetrics adversary_step(TrainState& state, const DenseMatrix& batch,
                                  std::span<const std::size_t> target_labels,
                                  std::span<const std::size_t> sensitive_labels) {
  DenseMatrix z_tar, z_res;
  state.encoder.encode(batch, z_tar, z_res);  // eval mode: embeddings are detached inputs

  StepMetrics metrics;
  DenseMatrix adv_s_logits;
  detail::train_classifier_step(state.adversary_sensitive, state.opt_adversary_sensitive, z_tar,
                                sensitive_labels, state.rng, metrics.loss_adv_S, &adv_s_logits);
  detail::train_classifier_step(state.adversary_target, state.opt_adversary_target, z_res,
                                target_labels, state.rng, metrics.loss_adv_T, nullptr);
  metrics.correct_adv_sensitive = detail::count_correct(adv_s_logits, sensitive_labels);
  metrics.loss_total = metrics.loss_adv_T + metrics.loss_adv_S;
  return metrics;
}

// Encoder plus predictors minimize utility and sanitization terms against
// frozen adversaries; gradients flow through the adversaries into the
// embeddings only.
inline StepMetrics encoder_step(TrainState& state, const DenseMatrix& batch,
                                std::span<const std::size_t> target_labels,
                                std::span<const std::size_t> sensitive_labels,
                                std::span<const std::size_t> example_rows,
                                const GameWeights& weights, SanitizeMode mode,
                                const FocalTargetTable* targets) {
  SplitEncoder::Cache enc_cache;
  DenseMatrix z_tar, z_res;
  state.encoder.encode(batch, z_tar, z_res, &enc_cache, true, &state.rng);

  MlpCache pt_cache, ps_cache, at_cache, as_cache;
  DenseMatrix logits_t = state.predictor_target.forward(z_tar, &pt_cache, true, &state.rng);
  DenseMatrix logits_s = state.predictor_sensitive.forward(z_res, &ps_cache, true, &state.rng);
  // Frozen critics run without dropout.
  DenseMatrix adv_t_logits = state.adversary_target.forward(z_res, &at_cache);
  DenseMatrix adv_s_logits = state.adversary_sensitive.forward(z_tar, &as_cache);

  LossGrad ce_t = softmax_cross_entropy(logits_t, target_labels);
  LossGrad ce_s = softmax_cross_entropy(logits_s, sensitive_labels);
  LossGrad adv_t = entropy_to_uniform_loss(adv_t_logits);
  LossGrad adv_s = [&] {
    if (mode == SanitizeMode::MaxentUniform) return entropy_to_uniform_loss(adv_s_logits);
    if (!targets) throw std::invalid_argument("encoder_step: focal modes need a target table");
    std::vector<const FocalTarget*> row_targets(batch.rows);
    for (std::size_t i = 0; i < batch.rows; ++i)
      row_targets[i] = targets->lookup(example_rows[i], sensitive_labels[i]);
    const FocalLossMode loss_mode =
        mode == SanitizeMode::FocalKlTau ? FocalLossMode::KlTau : FocalLossMode::Split;
    return focal_sanitize_loss(adv_s_logits, std::span<const FocalTarget* const>(row_targets),
                               loss_mode);
  }();

  StepMetrics metrics;
  metrics.loss_target = ce_t.loss;
  metrics.loss_sensitive = ce_s.loss;
  metrics.loss_adv_T = adv_t.loss;
  metrics.loss_adv_S = adv_s.loss;
  metrics.correct_target = detail::count_correct(logits_t, target_labels);
  metrics.correct_adv_sensitive = detail::count_correct(adv_s_logits, sensitive_labels);

  DenseMatrix grad_z_tar(z_tar.rows, z_tar.cols);
  DenseMatrix grad_z_res(z_res.rows, z_res.cols);
  std::vector<double> g_pt(state.predictor_target.param_count(), 0.0);
  std::vector<double> g_ps(state.predictor_sensitive.param_count(), 0.0);

  auto accumulate = [](DenseMatrix& into, const DenseMatrix& from) {
    for (std::size_t i = 0; i < into.data.size(); ++i) into.data[i] += from.data[i];
  };

  if (weights.alpha_T > 0.0) {
    detail::scale_grad(ce_t.grad, weights.alpha_T);
    accumulate(grad_z_tar, state.predictor_target.backward(pt_cache, ce_t.grad, &g_pt));
  }
  if (weights.alpha_S > 0.0) {
    detail::scale_grad(ce_s.grad, weights.alpha_S);
    accumulate(grad_z_res, state.predictor_sensitive.backward(ps_cache, ce_s.grad, &g_ps));
  }
  if (weights.beta_T > 0.0) {
    detail::scale_grad(adv_t.grad, weights.beta_T);
    accumulate(grad_z_res, state.adversary_target.backward(at_cache, adv_t.grad, nullptr));
  }
  if (weights.beta_S > 0.0) {
    detail::scale_grad(adv_s.grad, weights.beta_S);
    accumulate(grad_z_tar, state.adversary_sensitive.backward(as_cache, adv_s.grad, nullptr));
  }

  std::vector<double> g_dec;
  if (state.decoder && weights.recon > 0.0) {
    MlpCache dec_cache;
    const DenseMatrix joint = detail::concat_cols(z_tar, z_res);
    DenseMatrix decoded = state.decoder->forward(joint, &dec_cache, true, &state.rng);
    LossGrad rec = mse_reconstruction_loss(decoded, batch);
    metrics.loss_recon = rec.loss;
    detail::scale_grad(rec.grad, weights.recon);
    g_dec.assign(state.decoder->param_count(), 0.0);
    const DenseMatrix g_joint = state.decoder->backward(dec_cache, rec.grad, &g_dec);
    const std::size_t d = z_tar.cols;
    for (std::size_t i = 0; i < g_joint.rows; ++i)
      for (std::size_t j = 0; j < d; ++j) {
        grad_z_tar.at(i, j) += g_joint.at(i, j);
        grad_z_res.at(i, j) += g_joint.at(i, j + d);
      }
  }

  std::vector<double> g_trunk(state.encoder.trunk().param_count(), 0.0);
  std::vector<double> g_th(state.encoder.target_head().param_count(), 0.0);
  std::vector<double> g_rh(state.encoder.residual_head().param_count(), 0.0);
  state.encoder.encode_backward(enc_cache, grad_z_tar, grad_z_res, &g_trunk, &g_th, &g_rh);

  adam_step(state.encoder.trunk().params(), g_trunk, state.opt_trunk);
  adam_step(state.encoder.target_head().params(), g_th, state.opt_target_head);
  adam_step(state.encoder.residual_head().params(), g_rh, state.opt_residual_head);
  adam_step(state.predictor_target.params(), g_pt, state.opt_predictor_target);
  adam_step(state.predictor_sensitive.params(), g_ps, state.opt_predictor_sensitive);
  if (!g_dec.empty()) adam_step(state.decoder->params(), g_dec, state.opt_decoder);

  metrics.loss_total = weights.alpha_T * metrics.loss_target +
                       weights.alpha_S * metrics.loss_sensitive +
                       weights.beta_T * metrics.loss_adv_T + weights.beta_S * metrics.loss_adv_S +
                       weights.recon * metrics.loss_recon;
  return metrics;
}

// ---------------------------------------------------------------------------
// Epochs and the full two-phase run
// ---------------------------------------------------------------------------

struct TrainRunSettings {
  ArchitectureSpec arch;
  GameWeights weights;
  TrainSchedule schedule;
  SanitizeMode sanitize_mode = SanitizeMode::FocalKlTau;
  PartitionMode partition_mode = PartitionMode::Labels;
  std::size_t k = 5;  // similar-set size in model_topk mode
};

namespace detail {

inline std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size,
                                                          Rng& rng) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  rng.shuffle(order);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + batch_size);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

inline void check_finite(const StepMetrics& metrics, Phase phase, std::size_t epoch,
                         std::size_t batch_index) {
  for (double loss : {metrics.loss_total, metrics.loss_target, metrics.loss_sensitive,
                      metrics.loss_adv_T, metrics.loss_adv_S, metrics.loss_recon})
    if (!std::isfinite(loss))
      throw NumericError("non-finite loss at phase=" + std::string(to_string(phase)) +
                         " epoch=" + std::to_string(epoch) +
                         " batch=" + std::to_string(batch_index));
}

}  // namespace detail

inline EpochMetrics warmup_epoch(TrainState& state, const LabeledDataset& train_data,
                                 const GameWeights& weights, const TrainSchedule& schedule) {
  EpochMetrics epoch;
  epoch.phase = Phase::Warmup;
  epoch.epoch = state.epoch;
  const auto batches = detail::make_batches(train_data.size(), schedule.batch_size, state.rng);
  std::size_t correct_t = 0, correct_s_adv = 0;
  std::size_t batch_index = 0;
  for (const auto& rows : batches) {
    const DenseMatrix batch = detail::gather_rows(train_data.features, rows);
    const std::vector<std::size_t> t = detail::gather(train_data.target_labels, rows);
    const std::vector<std::size_t> s = detail::gather(train_data.sensitive_labels, rows);
    const StepMetrics step = warmup_step(state, batch, t, s, weights);
    detail::check_finite(step, Phase::Warmup, state.epoch, batch_index++);
    const double w = static_cast<double>(rows.size()) / static_cast<double>(train_data.size());
    epoch.loss_total += w * step.loss_total;
    epoch.loss_target += w * step.loss_target;
    epoch.loss_sensitive += w * step.loss_sensitive;
    epoch.loss_recon += w * step.loss_recon;
    correct_t += step.correct_target;
    correct_s_adv += step.correct_adv_sensitive;
  }
  epoch.acc_target_train = static_cast<double>(correct_t) / static_cast<double>(train_data.size());
  epoch.acc_sensitive_adv_train =
      static_cast<double>(correct_s_adv) / static_cast<double>(train_data.size());
  ++state.epoch;
  state.history.push_back(epoch);
  return epoch;
}

inline EpochMetrics burnin_epoch(TrainState& state, const LabeledDataset& train_data,
                                 const TrainRunSettings& settings,
                                 const FocalTargetTable* targets) {
  EpochMetrics epoch;
  epoch.phase = Phase::Burnin;
  epoch.epoch = state.epoch;
  const auto batches =
      detail::make_batches(train_data.size(), settings.schedule.batch_size, state.rng);
  std::size_t correct_t = 0, correct_s_adv = 0;
  std::size_t batch_index = 0;
  for (const auto& rows : batches) {
    const DenseMatrix batch = detail::gather_rows(train_data.features, rows);
    const std::vector<std::size_t> t = detail::gather(train_data.target_labels, rows);
    const std::vector<std::size_t> s = detail::gather(train_data.sensitive_labels, rows);

    for (std::size_t a = 0; a < settings.schedule.adversary_steps; ++a) {
      const StepMetrics adv = adversary_step(state, batch, t, s);
      detail::check_finite(adv, Phase::Burnin, state.epoch, batch_index);
    }
    const StepMetrics step = encoder_step(state, batch, t, s, rows, settings.weights,
                                          settings.sanitize_mode, targets);
    detail::check_finite(step, Phase::Burnin, state.epoch, batch_index++);

    const double w = static_cast<double>(rows.size()) / static_cast<double>(train_data.size());
    epoch.loss_total += w * step.loss_total;
    epoch.loss_target += w * step.loss_target;
    epoch.loss_sensitive += w * step.loss_sensitive;
    epoch.loss_adv_T += w * step.loss_adv_T;
    epoch.loss_adv_S += w * step.loss_adv_S;
    epoch.loss_recon += w * step.loss_recon;
    correct_t += step.correct_target;
    correct_s_adv += step.correct_adv_sensitive;
  }
  epoch.acc_target_train = static_cast<double>(correct_t) / static_cast<double>(train_data.size());
  epoch.acc_sensitive_adv_train =
      static_cast<double>(correct_s_adv) / static_cast<double>(train_data.size());
  ++state.epoch;
  state.history.push_back(epoch);
  return epoch;
}

using EpochCallback = std::function<void(const TrainState&, const EpochMetrics&)>;

// The full two-phase protocol. Fully deterministic given (settings, data).
inline TrainState train(const LabeledDataset& train_data, const TrainRunSettings& settings,
                        const EpochCallback& on_epoch = {}) {
  settings.weights.validate();
  settings.schedule.validate();
  train_data.check_consistent();
  if (train_data.size() == 0) throw ConfigError("train: empty dataset");
  if (settings.schedule.warmup_epochs > 0 && settings.weights.alpha_T <= 0.0 &&
      settings.weights.alpha_S <= 0.0 && settings.weights.recon <= 0.0)
    throw ConfigError("train: warm-up needs alpha_T, alpha_S or recon positive");

  const bool focal = settings.sanitize_mode != SanitizeMode::MaxentUniform;
  std::optional<LabelGrouping> grouping = train_data.grouping;
  if (focal && settings.partition_mode == PartitionMode::Labels && !grouping) {
    if (train_data.n_sensitive_classes == 2) {
      grouping.emplace(std::vector<std::size_t>{0, 1});
    } else {
      throw ConfigError("train: labels partition mode needs a dataset grouping");
    }
  }
  if (focal && settings.partition_mode == PartitionMode::ModelTopK &&
      (settings.k < 1 || settings.k >= train_data.n_sensitive_classes))
    throw ConfigError("train: k must satisfy 1 <= k <= N-1");

  TrainState state =
      init_train_state(train_data.features.cols, train_data.n_target_classes,
                       train_data.n_sensitive_classes, settings.arch, settings.schedule,
                       settings.weights.recon > 0.0);

  for (std::size_t e = 0; e < settings.schedule.warmup_epochs; ++e) {
    const EpochMetrics metrics = warmup_epoch(state, train_data, settings.weights,
                                              settings.schedule);
    if (on_epoch) on_epoch(state, metrics);
  }

  std::optional<FocalTargetTable> targets;
  if (focal && settings.partition_mode == PartitionMode::Labels)
    targets = FocalTargetTable::from_labels(*grouping, train_data.n_sensitive_classes);

  for (std::size_t e = 0; e < settings.schedule.burnin_epochs; ++e) {
    if (focal && settings.partition_mode == PartitionMode::ModelTopK)
      targets = FocalTargetTable::from_adversary(state.encoder, state.adversary_sensitive,
                                                 train_data.features, settings.k);
    const EpochMetrics metrics =
        burnin_epoch(state, train_data, settings, targets ? &*targets : nullptr);
    if (on_epoch) on_epoch(state, metrics);
  }
  return state;
}

// ---------------------------------------------------------------------------
// Whole-state checkpointing
// ---------------------------------------------------------------------------

inline constexpr std::uint64_t kCheckpointMagic = 0x4b43'5346ull;  // "FSCK"
inline constexpr std::uint64_t kCheckpointVersion = 1;

inline void save_train_state(std::ostream& out, const TrainState& state) {
  bin::write_u64(out, kCheckpointMagic);
  bin::write_u64(out, kCheckpointVersion);
  bin::write_u64(out, state.input_dim);
  bin::write_u64(out, state.n_target_classes);
  bin::write_u64(out, state.n_sensitive_classes);
  bin::write_u64(out, state.epoch);
  save_mlp(out, state.encoder.trunk());
  save_mlp(out, state.encoder.target_head());
  save_mlp(out, state.encoder.residual_head());
  save_mlp(out, state.predictor_target);
  save_mlp(out, state.predictor_sensitive);
  save_mlp(out, state.adversary_target);
  save_mlp(out, state.adversary_sensitive);
  bin::write_u64(out, state.decoder ? 1 : 0);
  if (state.decoder) save_mlp(out, *state.decoder);
  for (const AdamState* opt :
       {&state.opt_trunk, &state.opt_target_head, &state.opt_residual_head,
        &state.opt_predictor_target, &state.opt_predictor_sensitive, &state.opt_adversary_target,
        &state.opt_adversary_sensitive, &state.opt_decoder})
    save_adam(out, *opt);
}

inline TrainState load_train_state(std::istream& in) {
  if (bin::read_u64(in) != kCheckpointMagic) throw ArtifactError("checkpoint: bad magic");
  if (bin::read_u64(in) != kCheckpointVersion)
    throw ArtifactError("checkpoint: unsupported version");
  const std::size_t input_dim = static_cast<std::size_t>(bin::read_u64(in));
  const std::size_t n_target = static_cast<std::size_t>(bin::read_u64(in));
  const std::size_t n_sensitive = static_cast<std::size_t>(bin::read_u64(in));
  const std::size_t epoch = static_cast<std::size_t>(bin::read_u64(in));

  Mlp trunk = load_mlp(in);
  Mlp target_head = load_mlp(in);
  Mlp residual_head = load_mlp(in);
  TrainState state{SplitEncoder(std::move(trunk), std::move(target_head), std::move(residual_head)),
                   load_mlp(in),
                   load_mlp(in),
                   load_mlp(in),
                   load_mlp(in),
                   std::nullopt,
                   AdamState{},
                   AdamState{},
                   AdamState{},
                   AdamState{},
                   AdamState{},
                   AdamState{},
                   AdamState{},
                   AdamState{}};
  if (bin::read_u64(in) != 0) state.decoder.emplace(load_mlp(in));
  state.opt_trunk = load_adam(in);
  state.opt_target_head = load_adam(in);
  state.opt_residual_head = load_adam(in);
  state.opt_predictor_target = load_adam(in);
  state.opt_predictor_sensitive = load_adam(in);
  state.opt_adversary_target = load_adam(in);
  state.opt_adversary_sensitive = load_adam(in);
  state.opt_decoder = load_adam(in);
  state.input_dim = input_dim;
  state.n_target_classes = n_target;
  state.n_sensitive_classes = n_sensitive;
  state.epoch = epoch;
  return state;
}

}  // namespace focal
