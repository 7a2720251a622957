#include <gtest/gtest.h>

#include <random>

#include "ldpo/hierarchy.hpp"
#include "oracles.hpp"

using namespace ldpo;

TEST(Affinity, SymmetricAndBounded) {
  std::mt19937_64 rng(1);
  std::vector<std::size_t> labels;
  const Matrix s = oracle::random_scores(40, 5, rng, labels);
  const ClusterAssignment a{labels, 5};
  const Matrix aff = affinity_from_scores(s, a);
  EXPECT_EQ(aff, aff.transpose());
  EXPECT_GE(aff.minCoeff(), 0.0);
  EXPECT_LE(aff.maxCoeff(), 1.0);
}

TEST(Affinity, PerfectClassifierGivesIdentity) {
  Matrix s = Matrix::Zero(6, 3);
  ClusterAssignment a{{0, 1, 2, 0, 1, 2}, 3};
  for (Eigen::Index i = 0; i < 6; ++i) s(i, static_cast<Eigen::Index>(a.labels[static_cast<std::size_t>(i)])) = 1.0;
  EXPECT_EQ(affinity_from_scores(s, a), Matrix(Matrix::Identity(3, 3)));
}

TEST(Affinity, SingletonGroupsReproduceBaseAffinityExactly) {
  std::mt19937_64 rng(2);
  std::vector<std::size_t> labels;
  const Matrix s = oracle::random_scores(30, 6, rng, labels);
  const ClusterAssignment a{labels, 6};
  std::vector<std::vector<std::size_t>> singletons;
  for (std::size_t c = 0; c < 6; ++c) singletons.push_back({c});
  EXPECT_EQ(level_affinity(s, a, singletons), affinity_from_scores(s, a));
}

TEST(Affinity, LevelAggregationMatchesDirectRecomputation) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::size_t> labels;
    const Matrix s = oracle::random_scores(25, 6, rng, labels);
    const ClusterAssignment a{labels, 6};
    std::vector<std::vector<std::size_t>> groups{{0, 3}, {1}, {2, 4, 5}};
    const Matrix got = level_affinity(s, a, groups);
    EXPECT_LE((got - oracle::level_affinity(s, labels, groups)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Affinity, RejectsBadGroups) {
  std::mt19937_64 rng(4);
  std::vector<std::size_t> labels;
  const Matrix s = oracle::random_scores(10, 3, rng, labels);
  const ClusterAssignment a{labels, 3};
  EXPECT_THROW(level_affinity(s, a, {{0, 1}}), Error);
  EXPECT_THROW(level_affinity(s, a, {{0, 1}, {1, 2}}), Error);
  EXPECT_THROW(level_affinity(s, a, {{0, 1, 2}, {}}), Error);
}

TEST(AffinityPropagation, TwoObviousGroups) {
  Matrix pts(6, 1);
  pts << 0, 0.1, 0.2, 10, 10.1, 10.2;
  Matrix s(6, 6);
  for (int i = 0; i < 6; ++i) {
    for (int j = 0; j < 6; ++j) s(i, j) = -(pts(i, 0) - pts(j, 0)) * (pts(i, 0) - pts(j, 0));
  }
  auto r = affinity_propagation(s);
  EXPECT_EQ(r.exemplars.size(), 2u);
  EXPECT_TRUE(oracle::same_partition(r.labels, {0, 0, 0, 1, 1, 1}));
  EXPECT_TRUE(r.converged);
}

TEST(AffinityPropagation, MatchesExhaustiveSearchOnSmallInstances) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> nd(0.0, 1.0);
  int matches = 0;
  const int trials = 30;
  for (int t = 0; t < trials; ++t) {
    const int n = 3 + static_cast<int>(rng() % 4);
    Matrix pts(n, 2);
    for (Eigen::Index i = 0; i < pts.size(); ++i) pts.data()[i] = nd(rng);
    Matrix s(n, n);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) s(i, j) = -(pts.row(i) - pts.row(j)).squaredNorm();
    }
    const double pref = median_off_diagonal(s);
    ApConfig cfg;
    cfg.preference = pref;
    const auto r = affinity_propagation(s, cfg);
    matches += oracle::matches_best_exemplars(s, pref, r.labels, r.exemplars);
  }
  EXPECT_GE(matches, trials * 19 / 20);
}

TEST(AffinityPropagation, MedianOffDiagonal) {
  Matrix s(3, 3);
  s << 9, 1, 2, 3, 9, 4, 5, 6, 9;
  EXPECT_DOUBLE_EQ(median_off_diagonal(s), 3.5);
}

TEST(CategoryTree, WidthsDecreaseToSingleRoot) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<std::size_t> labels;
    const std::size_t k = 3 + rng() % 8;
    const Matrix s = oracle::random_scores(60, k, rng, labels);
    const auto tree = build_tree(s, ClusterAssignment{labels, k});
    EXPECT_NO_THROW(tree.validate());
    const auto w = tree.widths();
    EXPECT_EQ(w.front(), k);
    EXPECT_EQ(w.back(), 1u);
    for (std::size_t i = 1; i < w.size(); ++i) EXPECT_LT(w[i], w[i - 1]);
  }
}

TEST(CategoryTree, TwoClassesGiveTwoLevels) {
  Matrix s(4, 2);
  s << 0.9, 0.1, 0.8, 0.2, 0.3, 0.7, 0.1, 0.9;
  const auto tree = build_tree(s, ClusterAssignment{{0, 0, 1, 1}, 2});
  EXPECT_EQ(tree.widths(), (std::vector<std::size_t>{2, 1}));
  const auto j = tree.to_json();
  EXPECT_EQ(j["level"], 1);
  EXPECT_EQ(j["members"].size(), 2u);
  EXPECT_EQ(j["children"].size(), 2u);
}

TEST(CategoryTree, BlockStructureGroupsFamilies) {
  // Six classes in two families: confusion stays inside a family.
  const std::size_t k = 6;
  std::vector<std::size_t> labels;
  Matrix s(60, 6);
  for (std::size_t m = 0; m < 60; ++m) {
    const std::size_t c = m % k;
    labels.push_back(c);
    for (std::size_t j = 0; j < k; ++j) {
      const bool same_family = (j / 3) == (c / 3);
      s(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(j)) = j == c ? 0.6 : (same_family ? 0.18 : 0.01);
    }
    s.row(static_cast<Eigen::Index>(m)) /= s.row(static_cast<Eigen::Index>(m)).sum();
  }
  const auto tree = build_tree(s, ClusterAssignment{labels, k});
  ASSERT_GE(tree.levels.size(), 3u);
  const auto& level1 = tree.levels[1].nodes;
  ASSERT_EQ(level1.size(), 2u);
  EXPECT_EQ(level1[0].members, (std::vector<std::size_t>{0, 1, 2}));
  EXPECT_EQ(level1[1].members, (std::vector<std::size_t>{3, 4, 5}));
}
