// Similar/dissimilar class partitions and the off-center peak distribution tau.
#pragma once

#include <algorithm>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "focal/prob.hpp"

namespace focal {

// A split of the sensitive classes {0..N-1} into a nonempty "similar" set and
// its nonempty complement. `similar()` preserves the order it was built with
// (rank order when it came from top-k scores); `dissimilar()` is ascending.
class ClassPartition {
 public:
  ClassPartition(std::size_t n_total, std::vector<std::size_t> similar)
      : n_total_(n_total), similar_(std::move(similar)), mask_(n_total, false) {
    if (n_total < 2) throw std::invalid_argument("ClassPartition: needs at least 2 classes");
    if (similar_.empty() || similar_.size() >= n_total)
      throw std::invalid_argument("ClassPartition: both groups must be nonempty");
    for (std::size_t cls : similar_) {
      if (cls >= n_total) throw std::invalid_argument("ClassPartition: class index out of range");
      if (mask_[cls]) throw std::invalid_argument("ClassPartition: duplicate class in similar set");
      mask_[cls] = true;
    }
    dissimilar_.reserve(n_total - similar_.size());
    for (std::size_t cls = 0; cls < n_total; ++cls)
      if (!mask_[cls]) dissimilar_.push_back(cls);
  }

  std::size_t n_total() const { return n_total_; }
  std::size_t n_similar() const { return similar_.size(); }
  std::size_t n_dissimilar() const { return dissimilar_.size(); }
  const std::vector<std::size_t>& similar() const { return similar_; }
  const std::vector<std::size_t>& dissimilar() const { return dissimilar_; }
  bool is_similar(std::size_t cls) const { return mask_.at(cls); }

  bool operator==(const ClassPartition& other) const {
    return n_total_ == other.n_total_ && mask_ == other.mask_;
  }

 private:
  std::size_t n_total_;
  std::vector<std::size_t> similar_;
  std::vector<std::size_t> dissimilar_;
  std::vector<bool> mask_;
};

// The peak distribution tau: uniform within each group, with the similar
// group carrying total mass N_d/(N_s+N_d) and the dissimilar group N_s/(N_s+N_d).
struct FocalTarget {
  ProbVector tau;
  ClassPartition partition;
  double group_mass_similar;
  double group_mass_dissimilar;
};

inline FocalTarget compute_tau(const ClassPartition& partition) {
  const double ns = static_cast<double>(partition.n_similar());
  const double nd = static_cast<double>(partition.n_dissimilar());
  const double tau_similar = nd / (ns * ns + nd * ns);
  const double tau_dissimilar = ns / (nd * nd + ns * nd);
  std::vector<double> tau(partition.n_total());
  for (std::size_t cls = 0; cls < partition.n_total(); ++cls)
    tau[cls] = partition.is_similar(cls) ? tau_similar : tau_dissimilar;
  return FocalTarget{ProbVector(std::move(tau)), partition, ns * tau_similar,
                     nd * tau_dissimilar};
}

}  // namespace focal
