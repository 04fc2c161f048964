// Probability and logit vectors over sensitive or target classes.
#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace focal {

inline constexpr double kProbSumTolerance = 1e-9;

// Numerically stable row softmax.
inline std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> out(logits.size());
  double top = -std::numeric_limits<double>::infinity();
  for (double z : logits) top = std::max(top, z);
  double total = 0.0;
  for (std::size_t j = 0; j < logits.size(); ++j) {
    out[j] = std::exp(logits[j] - top);
    total += out[j];
  }
  for (double& v : out) v /= total;
  return out;
}

// Shannon entropy in nats, with 0 ln 0 = 0.
inline double shannon_entropy(std::span<const double> p) {
  double h = 0.0;
  for (double v : p)
    if (v > 0.0) h -= v * std::log(v);
  return h;
}

// A categorical distribution: nonnegative entries summing to 1, length >= 2.
class ProbVector {
 public:
  explicit ProbVector(std::vector<double> values) : values_(std::move(values)) {
    if (values_.size() < 2) throw std::invalid_argument("ProbVector: needs at least 2 entries");
    double total = 0.0;
    for (double v : values_) {
      if (!(v >= 0.0)) throw std::invalid_argument("ProbVector: negative or non-finite entry");
      total += v;
    }
    if (std::abs(total - 1.0) > kProbSumTolerance)
      throw std::invalid_argument("ProbVector: entries sum to " + std::to_string(total) +
                                  ", expected 1");
  }

  static ProbVector uniform(std::size_t n) {
    return ProbVector(std::vector<double>(n, 1.0 / static_cast<double>(n)));
  }

  static ProbVector one_hot(std::size_t n, std::size_t j) {
    std::vector<double> v(n, 0.0);
    v.at(j) = 1.0;
    return ProbVector(std::move(v));
  }

  std::size_t size() const { return values_.size(); }
  double operator[](std::size_t j) const { return values_[j]; }
  const std::vector<double>& values() const { return values_; }

 private:
  std::vector<double> values_;
};

// Pre-softmax scores; softmax(LogitVector) yields the predictor distribution.
class LogitVector {
 public:
  explicit LogitVector(std::vector<double> values) : values_(std::move(values)) {
    if (values_.size() < 2) throw std::invalid_argument("LogitVector: needs at least 2 entries");
    for (double v : values_)
      if (!std::isfinite(v)) throw std::invalid_argument("LogitVector: non-finite entry");
  }

  std::size_t size() const { return values_.size(); }
  double operator[](std::size_t j) const { return values_[j]; }
  const std::vector<double>& values() const { return values_; }

 private:
  std::vector<double> values_;
};

}  // namespace focal
