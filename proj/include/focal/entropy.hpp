// Off-centered (focal) entropy, its gradient, and the KL identities tying it
// to the split-group training surrogate. All values are in nats. Pure
// functions, safe for concurrent use.
#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "focal/partition.hpp"
#include "focal/prob.hpp"

namespace focal {

// Probability floor applied before logarithms on gradient paths only; exact
// operations below never clamp.
inline constexpr double kGradLogFloor = 1e-12;

// Piecewise-linear remapping that relocates the entropy peak to tau. Returns
// the unnormalized pi; both branches agree (1/N) at p_j = tau_j.
inline std::vector<double> offcenter_transform(const ProbVector& p, const FocalTarget& target) {
  const std::size_t n = p.size();
  if (n != target.tau.size())
    throw std::invalid_argument("offcenter_transform: length mismatch");
  const double dn = static_cast<double>(n);
  std::vector<double> pi(n);
  for (std::size_t j = 0; j < n; ++j) {
    const double tj = target.tau[j];
    if (tj >= 1.0)
      throw std::invalid_argument("offcenter_transform: tau entry of 1 makes the upper branch degenerate");
    if (p[j] <= tj && tj > 0.0) {
      pi[j] = p[j] / (dn * tj);
    } else {
      pi[j] = (dn * (p[j] - tj) + 1.0 - p[j]) / (dn * (1.0 - tj));
    }
  }
  return pi;
}

inline ProbVector normalize_pi(std::span<const double> pi) {
  if (pi.size() < 2) throw std::invalid_argument("normalize_pi: needs at least 2 entries");
  double total = 0.0;
  for (double v : pi) {
    if (!(v >= 0.0)) throw std::invalid_argument("normalize_pi: negative or non-finite entry");
    total += v;
  }
  if (total <= 0.0) throw std::invalid_argument("normalize_pi: all-zero input");
  std::vector<double> out(pi.size());
  for (std::size_t j = 0; j < pi.size(); ++j) out[j] = pi[j] / total;
  return ProbVector(std::move(out));
}

inline ProbVector normalize_pi(const std::vector<double>& pi) {
  return normalize_pi(std::span<const double>(pi));
}

// eta(p) = h(pi*), maximal (ln N) exactly at p = tau.
inline double focal_entropy(const ProbVector& p, const FocalTarget& target) {
  const ProbVector pi_star = normalize_pi(offcenter_transform(p, target));
  return shannon_entropy(pi_star.values());
}

// Analytic gradient of eta(softmax(logits)) w.r.t. the logits. At the branch
// boundary p_j = tau_j the lower branch's slope is used.
inline std::vector<double> focal_entropy_grad(const LogitVector& logits,
                                              const FocalTarget& target) {
  const std::size_t n = logits.size();
  if (n != target.tau.size()) throw std::invalid_argument("focal_entropy_grad: length mismatch");
  const double dn = static_cast<double>(n);
  const std::vector<double> p = softmax(logits.values());

  std::vector<double> pi(n), slope(n);
  double total = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    const double tj = target.tau[j];
    if (p[j] <= tj && tj > 0.0) {
      slope[j] = 1.0 / (dn * tj);
      pi[j] = p[j] * slope[j];
    } else {
      slope[j] = (dn - 1.0) / (dn * (1.0 - tj));
      pi[j] = (dn * (p[j] - tj) + 1.0 - p[j]) / (dn * (1.0 - tj));
    }
    total += pi[j];
  }

  double eta = 0.0;
  std::vector<double> log_pi_star(n);
  for (std::size_t j = 0; j < n; ++j) {
    const double star = std::max(pi[j] / total, kGradLogFloor);
    log_pi_star[j] = std::log(star);
    eta -= star * log_pi_star[j];
  }

  // d eta / d pi_j = -(ln pi*_j + eta) / S, then through the remap slope and
  // the softmax Jacobian.
  std::vector<double> dp(n);
  double weighted = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    dp[j] = slope[j] * (-(log_pi_star[j] + eta) / total);
    weighted += dp[j] * p[j];
  }
  std::vector<double> grad(n);
  for (std::size_t j = 0; j < n; ++j) grad[j] = p[j] * (dp[j] - weighted);
  return grad;
}

// KL(p || q) with 0 ln(0/q) = 0; support violations are errors, not Inf.
inline double kl_divergence(const ProbVector& p, const ProbVector& q) {
  if (p.size() != q.size()) throw std::invalid_argument("kl_divergence: length mismatch");
  double acc = 0.0;
  for (std::size_t j = 0; j < p.size(); ++j) {
    if (p[j] == 0.0) continue;
    if (q[j] == 0.0)
      throw std::invalid_argument("kl_divergence: p has mass where q is zero (class " +
                                  std::to_string(j) + ")");
    acc += p[j] * std::log(p[j] / q[j]);
  }
  return acc;
}

inline double kl_to_uniform(const ProbVector& p) {
  return std::log(static_cast<double>(p.size())) - shannon_entropy(p.values());
}

// The split-group surrogate: KL of each within-group conditional against the
// group uniform, summed. A zero-mass group contributes 0.
inline double split_group_kl(const ProbVector& p, const ClassPartition& partition) {
  if (p.size() != partition.n_total())
    throw std::invalid_argument("split_group_kl: length mismatch");
  auto group_term = [&](const std::vector<std::size_t>& group) {
    double mass = 0.0;
    for (std::size_t j : group) mass += p[j];
    if (mass <= 0.0) return 0.0;
    const double ng = static_cast<double>(group.size());
    double acc = 0.0;
    for (std::size_t j : group) {
      const double cond = p[j] / mass;
      if (cond > 0.0) acc += cond * std::log(cond * ng);
    }
    return acc;
  };
  return group_term(partition.similar()) + group_term(partition.dissimilar());
}

// Chain decomposition KL(p||tau) = KL(m||m_tau) + m_s KL(p|s||U_s) + m_d KL(p|d||U_d).
struct KlChainTerms {
  double mass_term;
  double within_similar;
  double within_dissimilar;
};

inline KlChainTerms kl_chain_decompose(const ProbVector& p, const FocalTarget& target) {
  const ClassPartition& part = target.partition;
  if (p.size() != part.n_total())
    throw std::invalid_argument("kl_chain_decompose: length mismatch");

  auto mass_of = [&](const std::vector<std::size_t>& group) {
    double mass = 0.0;
    for (std::size_t j : group) mass += p[j];
    return mass;
  };
  const double mass_s = mass_of(part.similar());
  const double mass_d = mass_of(part.dissimilar());

  auto mass_kl = [](double m, double m_tau) {
    return m > 0.0 ? m * std::log(m / m_tau) : 0.0;
  };
  const double mass_term = mass_kl(mass_s, target.group_mass_similar) +
                           mass_kl(mass_d, target.group_mass_dissimilar);

  // Weighted within-group term: m_g * KL(p|g || U_g) = sum_j p_j ln(p_j N_g / m_g).
  auto within = [&](const std::vector<std::size_t>& group, double mass) {
    if (mass <= 0.0) return 0.0;
    const double ng = static_cast<double>(group.size());
    double acc = 0.0;
    for (std::size_t j : group)
      if (p[j] > 0.0) acc += p[j] * std::log(p[j] * ng / mass);
    return acc;
  };
  return KlChainTerms{mass_term, within(part.similar(), mass_s),
                      within(part.dissimilar(), mass_d)};
}

}  // namespace focal
