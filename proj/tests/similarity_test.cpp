#include "focal/similarity.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <set>
#include <vector>

#include "test_util.hpp"

using focal::ClassPartition;
using focal::LabelGrouping;
using focal::LogitVector;
using focal::partition_from_labels;
using focal::partition_from_model;
using focal::ScoreVector;
using focal::top_k_similar;

namespace {

std::set<std::size_t> as_set(const std::vector<std::size_t>& v) { return {v.begin(), v.end()}; }

}  // namespace

TEST(TopKSimilar, SelectsLargestScores) {
  const ClassPartition part = top_k_similar(ScoreVector{5, 2, 9, 1}, 2);
  EXPECT_EQ(part.similar(), (std::vector<std::size_t>{2, 0}));
  EXPECT_EQ(part.dissimilar(), (std::vector<std::size_t>{1, 3}));
}

TEST(TopKSimilar, TieBreaksByLowestIndex) {
  const ClassPartition part = top_k_similar(ScoreVector{3, 3, 1}, 1);
  EXPECT_EQ(part.similar(), (std::vector<std::size_t>{0}));
}

TEST(TopKSimilar, RejectsDegenerateK) {
  EXPECT_THROW(top_k_similar(ScoreVector{1, 2, 3}, 3), std::invalid_argument);
  EXPECT_THROW(top_k_similar(ScoreVector{1, 2, 3}, 0), std::invalid_argument);
  EXPECT_THROW(top_k_similar(ScoreVector{1, 2, 3}, 4), std::invalid_argument);
}

TEST(TopKSimilar, RejectsNonFiniteScores) {
  EXPECT_THROW(top_k_similar(ScoreVector{1.0, std::nan("")}, 1), std::invalid_argument);
}

TEST(TopKSimilar, SizeShiftAndScaleInvariance) {
  testutil::Rand rnd(71);
  for (int rep = 0; rep < 200; ++rep) {
    const std::size_t n = 3 + rnd.below(10);
    const std::size_t k = 1 + rnd.below(n - 1);
    ScoreVector scores(n);
    for (double& s : scores) s = rnd.uniform(-5, 5);

    const ClassPartition base = top_k_similar(scores, k);
    EXPECT_EQ(base.similar().size(), k);

    ScoreVector shifted = scores, scaled = scores;
    const double shift = rnd.uniform(-100, 100);
    const double scale = 0.01 + rnd.uniform() * 10;
    for (double& s : shifted) s += shift;
    for (double& s : scaled) s *= scale;
    EXPECT_TRUE(top_k_similar(shifted, k) == base);
    EXPECT_TRUE(top_k_similar(scaled, k) == base);
  }
}

TEST(PartitionFromLabels, GroupOfFive) {
  // 100 classes in 20 consecutive groups of 5; class 7 sits in group 1.
  std::vector<std::size_t> group_of(100);
  for (std::size_t cls = 0; cls < 100; ++cls) group_of[cls] = cls / 5;
  const LabelGrouping grouping(group_of);
  const ClassPartition part = partition_from_labels(7, grouping);
  EXPECT_EQ(as_set(part.similar()), (std::set<std::size_t>{5, 6, 7, 8, 9}));
  EXPECT_EQ(part.n_dissimilar(), 95u);
}

TEST(PartitionFromLabels, TwoGroupsOfTwo) {
  const LabelGrouping grouping(std::vector<std::size_t>{0, 0, 1, 1});
  const ClassPartition part = partition_from_labels(3, grouping);
  EXPECT_EQ(as_set(part.similar()), (std::set<std::size_t>{2, 3}));
}

TEST(PartitionFromLabels, RejectsSingleGroup) {
  EXPECT_THROW(LabelGrouping(std::vector<std::size_t>{0, 0, 0}), std::invalid_argument);
}

TEST(PartitionFromLabels, RejectsOutOfRangeClass) {
  const LabelGrouping grouping(std::vector<std::size_t>{0, 0, 1, 1});
  EXPECT_THROW(partition_from_labels(4, grouping), std::invalid_argument);
}

TEST(PartitionFromModel, DominantLogit) {
  const ClassPartition part = partition_from_model(LogitVector({0, 0, 10, 0}), 1);
  EXPECT_EQ(part.similar(), (std::vector<std::size_t>{2}));
}

TEST(PartitionFromModel, AllEqualTieBreak) {
  const ClassPartition part = partition_from_model(LogitVector({1, 1, 1, 1}), 2);
  EXPECT_EQ(part.similar(), (std::vector<std::size_t>{0, 1}));
}

TEST(PartitionFromModel, MatchesBruteForceSort) {
  const ClassPartition part = partition_from_model(LogitVector({1, 3, 2, 4, 0}), 3);
  EXPECT_EQ(part.similar(), (std::vector<std::size_t>{3, 1, 2}));

  testutil::Rand rnd(73);
  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t n = 3 + rnd.below(8);
    const std::size_t k = 1 + rnd.below(n - 1);
    const std::vector<double> z = rnd.logits(n, 3.0);

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return z[a] > z[b]; });
    order.resize(k);

    EXPECT_EQ(partition_from_model(LogitVector(z), k).similar(), order);
  }
}

TEST(PartitionFromModel, LogitShiftInvariance) {
  testutil::Rand rnd(79);
  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t n = 4 + rnd.below(6);
    const std::size_t k = 1 + rnd.below(n - 1);
    std::vector<double> z = rnd.logits(n, 3.0);
    const ClassPartition base = partition_from_model(LogitVector(z), k);
    const double shift = rnd.uniform(-50, 50);
    for (double& v : z) v += shift;
    EXPECT_TRUE(partition_from_model(LogitVector(z), k) == base);
  }
}

TEST(PartitionFromModel, PerfectProbeContainsTrueClass) {
  // When the probe ranks the true class first, it must land in `similar`.
  testutil::Rand rnd(83);
  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t n = 4 + rnd.below(6);
    const std::size_t truth = rnd.below(n);
    std::vector<double> z = rnd.logits(n, 1.0);
    z[truth] += 10.0;
    const std::size_t k = 1 + rnd.below(n - 1);
    const ClassPartition part = partition_from_model(LogitVector(z), k);
    EXPECT_TRUE(part.is_similar(truth));
  }
}
