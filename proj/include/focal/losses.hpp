// Batch losses over logits, each returning the mean loss and its analytic
// gradient with respect to the logits. Probabilities are floored at 1e-12
// inside gradient logarithms only.
#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "focal/entropy.hpp"
#include "focal/matrix.hpp"
#include "focal/partition.hpp"
#include "focal/prob.hpp"

namespace focal {

struct LossGrad {
  double loss = 0.0;
  DenseMatrix grad;
};

namespace detail {

inline void row_softmax(const DenseMatrix& logits, DenseMatrix& probs) {
  probs.rows = logits.rows;
  probs.cols = logits.cols;
  probs.data.resize(logits.data.size());
  for (std::size_t i = 0; i < logits.rows; ++i) {
    const double* zr = logits.row(i);
    double* pr = probs.row(i);
    double top = zr[0];
    for (std::size_t j = 1; j < logits.cols; ++j) top = std::max(top, zr[j]);
    double total = 0.0;
    for (std::size_t j = 0; j < logits.cols; ++j) {
      pr[j] = std::exp(zr[j] - top);
      total += pr[j];
    }
    for (std::size_t j = 0; j < logits.cols; ++j) pr[j] /= total;
  }
}

inline double safe_log(double v) { return std::log(std::max(v, kGradLogFloor)); }

}  // namespace detail

// Mean negative log-likelihood; grad = (softmax - one_hot) / batch. The loss
// value uses the raw logarithm: a fully saturated wrong prediction yields an
// infinite loss, which the training loop reports as divergence.
inline LossGrad softmax_cross_entropy(const DenseMatrix& logits,
                                      std::span<const std::size_t> labels) {
  if (labels.size() != logits.rows)
    throw std::invalid_argument("softmax_cross_entropy: one label per row required");
  LossGrad out;
  detail::row_softmax(logits, out.grad);
  const double inv_batch = 1.0 / static_cast<double>(logits.rows);
  for (std::size_t i = 0; i < logits.rows; ++i) {
    if (labels[i] >= logits.cols)
      throw std::invalid_argument("softmax_cross_entropy: label out of range");
    double* gr = out.grad.row(i);
    out.loss -= std::log(gr[labels[i]]);
    gr[labels[i]] -= 1.0;
    for (std::size_t j = 0; j < logits.cols; ++j) gr[j] *= inv_batch;
  }
  out.loss *= inv_batch;
  return out;
}

// Mean KL(softmax(row) || U); zero exactly at uniform predictions.
inline LossGrad entropy_to_uniform_loss(const DenseMatrix& logits) {
  LossGrad out;
  detail::row_softmax(logits, out.grad);
  const std::size_t n = logits.cols;
  const double log_n = std::log(static_cast<double>(n));
  const double inv_batch = 1.0 / static_cast<double>(logits.rows);
  for (std::size_t i = 0; i < logits.rows; ++i) {
    double* pr = out.grad.row(i);
    double row_kl = log_n;
    for (std::size_t j = 0; j < n; ++j)
      if (pr[j] > 0.0) row_kl += pr[j] * std::log(pr[j]);
    out.loss += row_kl;
    for (std::size_t j = 0; j < n; ++j)
      pr[j] = pr[j] * (log_n + detail::safe_log(pr[j]) - row_kl) * inv_batch;
  }
  out.loss *= inv_batch;
  return out;
}

enum class FocalLossMode { KlTau, Split };

// Per-row sanitization loss against a per-example peak distribution:
// KlTau:  KL(softmax(row) || tau_row)            (the transformed-probability route)
// Split:  within-group KLs against group uniforms (the split surrogate)
inline LossGrad focal_sanitize_loss(const DenseMatrix& logits,
                                    std::span<const FocalTarget* const> targets,
                                    FocalLossMode mode) {
  if (targets.size() != logits.rows)
    throw std::invalid_argument("focal_sanitize_loss: one target per row required");
  LossGrad out;
  DenseMatrix probs;
  detail::row_softmax(logits, probs);
  out.grad = DenseMatrix(logits.rows, logits.cols);
  const std::size_t n = logits.cols;
  const double inv_batch = 1.0 / static_cast<double>(logits.rows);

  std::vector<double> dp(n);
  for (std::size_t i = 0; i < logits.rows; ++i) {
    const FocalTarget& target = *targets[i];
    if (target.tau.size() != n)
      throw std::invalid_argument("focal_sanitize_loss: target length mismatch");
    const double* pr = probs.row(i);
    double* gr = out.grad.row(i);
    double row_loss = 0.0;

    if (mode == FocalLossMode::KlTau) {
      for (std::size_t j = 0; j < n; ++j)
        if (pr[j] > 0.0) row_loss += pr[j] * std::log(pr[j] / target.tau[j]);
      for (std::size_t j = 0; j < n; ++j)
        dp[j] = detail::safe_log(pr[j]) - std::log(target.tau[j]) - row_loss;
    } else {
      auto group_stats = [&](const std::vector<std::size_t>& group, double& mass, double& plogp) {
        mass = 0.0;
        plogp = 0.0;
        for (std::size_t j : group) {
          mass += pr[j];
          if (pr[j] > 0.0) plogp += pr[j] * std::log(pr[j]);
        }
      };
      const ClassPartition& part = target.partition;
      double mass_s, plogp_s, mass_d, plogp_d;
      group_stats(part.similar(), mass_s, plogp_s);
      group_stats(part.dissimilar(), mass_d, plogp_d);
      auto group_loss = [](double mass, double plogp, std::size_t ng) {
        if (mass <= 0.0) return 0.0;
        return plogp / mass + std::log(static_cast<double>(ng)) - std::log(mass);
      };
      row_loss = group_loss(mass_s, plogp_s, part.n_similar()) +
                 group_loss(mass_d, plogp_d, part.n_dissimilar());
      // dL/dp_k = (ln p_k - S_h / m_h) / m_h for k in group h.
      const double ms = std::max(mass_s, kGradLogFloor);
      const double md = std::max(mass_d, kGradLogFloor);
      for (std::size_t j = 0; j < n; ++j) {
        if (part.is_similar(j))
          dp[j] = (detail::safe_log(pr[j]) - plogp_s / ms) / ms;
        else
          dp[j] = (detail::safe_log(pr[j]) - plogp_d / md) / md;
      }
    }

    double weighted = 0.0;
    for (std::size_t j = 0; j < n; ++j) weighted += dp[j] * pr[j];
    for (std::size_t j = 0; j < n; ++j) gr[j] = pr[j] * (dp[j] - weighted) * inv_batch;
    out.loss += row_loss;
  }
  out.loss *= inv_batch;
  return out;
}

inline LossGrad focal_sanitize_loss(const DenseMatrix& logits,
                                    std::span<const FocalTarget> targets, FocalLossMode mode) {
  std::vector<const FocalTarget*> ptrs(targets.size());
  for (std::size_t i = 0; i < targets.size(); ++i) ptrs[i] = &targets[i];
  return focal_sanitize_loss(logits, std::span<const FocalTarget* const>(ptrs), mode);
}

// Mean squared error over all entries; grad = 2 (decoded - original) / count.
inline LossGrad mse_reconstruction_loss(const DenseMatrix& decoded, const DenseMatrix& original) {
  if (!decoded.same_shape(original))
    throw std::invalid_argument("mse_reconstruction_loss: shape mismatch");
  LossGrad out;
  out.grad = DenseMatrix(decoded.rows, decoded.cols);
  const double inv_count = 1.0 / static_cast<double>(decoded.data.size());
  for (std::size_t i = 0; i < decoded.data.size(); ++i) {
    const double diff = decoded.data[i] - original.data[i];
    out.loss += diff * diff;
    out.grad.data[i] = 2.0 * diff * inv_count;
  }
  out.loss *= inv_count;
  return out;
}

}  // namespace focal
