// Per-input similar/dissimilar partitions from label structure or model scores.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <set>
#include <stdexcept>
#include <vector>

#include "focal/partition.hpp"
#include "focal/prob.hpp"

namespace focal {

// One real score per sensitive class.
using ScoreVector = std::vector<double>;

// Maps each sensitive class to a group identifier (e.g. a superclass).
class LabelGrouping {
 public:
  explicit LabelGrouping(std::vector<std::size_t> group_of) : group_of_(std::move(group_of)) {
    if (group_of_.size() < 2) throw std::invalid_argument("LabelGrouping: needs at least 2 classes");
    const std::set<std::size_t> distinct(group_of_.begin(), group_of_.end());
    if (distinct.size() < 2)
      throw std::invalid_argument("LabelGrouping: needs at least 2 distinct groups");
  }

  std::size_t n_classes() const { return group_of_.size(); }
  std::size_t group_of(std::size_t cls) const {
    if (cls >= group_of_.size()) throw std::invalid_argument("LabelGrouping: class out of range");
    return group_of_[cls];
  }

 private:
  std::vector<std::size_t> group_of_;
};

// similar = the k indices with largest scores; ties go to the lower index.
inline ClassPartition top_k_similar(const ScoreVector& scores, std::size_t k) {
  const std::size_t n = scores.size();
  if (k == 0 || k >= n)
    throw std::invalid_argument("top_k_similar: k must satisfy 1 <= k <= N-1");
  for (double s : scores)
    if (!std::isfinite(s)) throw std::invalid_argument("top_k_similar: non-finite score");

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  order.resize(k);
  return ClassPartition(n, std::move(order));
}

// similar = every class sharing the input's group, including itself.
inline ClassPartition partition_from_labels(std::size_t sensitive_class,
                                            const LabelGrouping& grouping) {
  const std::size_t n = grouping.n_classes();
  const std::size_t group = grouping.group_of(sensitive_class);
  std::vector<std::size_t> similar;
  for (std::size_t cls = 0; cls < n; ++cls)
    if (grouping.group_of(cls) == group) similar.push_back(cls);
  if (similar.size() == n)
    throw std::invalid_argument("partition_from_labels: group covers every class");
  return ClassPartition(n, std::move(similar));
}

// Score the classes by softmax of the probe output; softmax is monotone, so
// this matches ranking the logits directly.
inline ClassPartition partition_from_model(const LogitVector& probe_output, std::size_t k) {
  return top_k_similar(softmax(probe_output.values()), k);
}

}  // namespace focal
