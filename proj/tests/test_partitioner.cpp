#include <gtest/gtest.h>

#include <set>

#include "optirouter/partitioner.hpp"
#include "test_util.hpp"

using namespace optirouter;

namespace {

void expect_valid(const Partitioning& p, std::size_t m, std::size_t c) {
  ASSERT_EQ(p.point_count(), m);
  ASSERT_EQ(p.shard_count(), c);
  std::size_t total = 0;
  std::set<PointId> seen;
  for (std::size_t k = 0; k < c; ++k) {
    total += p.shards[k].size();
    for (PointId id : p.shards[k]) {
      EXPECT_EQ(p.assignments[id], k);
      EXPECT_TRUE(seen.insert(id).second);
    }
  }
  EXPECT_EQ(total, m);
  for (ShardId a : p.assignments) EXPECT_LT(a, c);
}

}  // namespace

TEST(KMeans, IdenticalPointsSingleShard) {
  auto x = testutil::rows({{1, 2}, {1, 2}, {1, 2}, {1, 2}});
  auto p = fit_kmeans(x, 1, 25, 0, ClusteringMode::kStandard);
  expect_valid(p, 4, 1);
  EXPECT_EQ(p.shards[0].size(), 4u);
  EXPECT_FLOAT_EQ(p.centroids.row(0)[0], 1.0f);
  EXPECT_FLOAT_EQ(p.centroids.row(0)[1], 2.0f);
}

TEST(KMeans, FourPointsMatchExhaustiveOptimum) {
  auto x = testutil::rows({{0, 0}, {0, 1}, {10, 0}, {10, 1}});
  const auto [best_cost, labels] = oracle::exhaustive_kmeans(testutil::to_nested(x), 2);
  for (std::uint64_t seed : {0, 1, 2, 3, 17}) {
    auto p = fit_kmeans(x, 2, 25, seed, ClusteringMode::kStandard);
    expect_valid(p, 4, 2);
    // Same grouping as the oracle's optimal labelling (labels may be permuted).
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 4; ++j)
        EXPECT_EQ(p.assignments[i] == p.assignments[j], labels[i] == labels[j]);
    std::set<std::vector<PointId>> groups(p.shards.begin(), p.shards.end());
    EXPECT_EQ(groups, (std::set<std::vector<PointId>>{{0, 1}, {2, 3}}));
    const ShardId a = p.assignments[0], b = p.assignments[2];
    EXPECT_NEAR(p.centroids.row(a)[0], 0.0, 1e-6);
    EXPECT_NEAR(p.centroids.row(a)[1], 0.5, 1e-6);
    EXPECT_NEAR(p.centroids.row(b)[0], 10.0, 1e-6);
    EXPECT_NEAR(p.centroids.row(b)[1], 0.5, 1e-6);
    EXPECT_NEAR(p.objective_history.back(), best_cost, 1e-9);
  }
}

TEST(KMeans, SmallSetsBoundedByExhaustiveOptimumAndLloydStable) {
  for (std::uint64_t trial = 0; trial < 10; ++trial) {
    auto x = testutil::random_set(7, 2, 100 + trial);
    const auto best = oracle::exhaustive_kmeans(testutil::to_nested(x), 3).first;
    for (std::uint64_t seed = 0; seed < 8; ++seed) {
      auto p = fit_kmeans(x, 3, 50, seed, ClusteringMode::kStandard);
      EXPECT_GE(p.objective_history.back(), best - 1e-6);
      // Converged: every point sits with its nearest centroid.
      for (std::size_t i = 0; i < 7; ++i) {
        const double own = detail::squared_distance(x.row(i), p.centroids.row(p.assignments[i]));
        for (std::size_t k = 0; k < 3; ++k) EXPECT_LE(own, detail::squared_distance(x.row(i), p.centroids.row(k)) + 1e-9);
      }
    }
  }
}

TEST(KMeans, SphericalCentroidsUnitNorm) {
  auto x = normalize_rows(testutil::random_set(500, 8, 5));
  auto p = fit_kmeans(x, 12, 25, 9, ClusteringMode::kSpherical);
  expect_valid(p, 500, 12);
  for (std::size_t k = 0; k < 12; ++k) {
    if (p.empty_flags[k]) continue;
    EXPECT_NEAR(std::sqrt(squared_norm(p.centroids.row(k))), 1.0, 1e-6);
  }
}

TEST(KMeans, StandardObjectiveNonIncreasing) {
  auto x = testutil::random_set(2000, 6, 8);
  auto p = fit_kmeans(x, 20, 40, 3, ClusteringMode::kStandard);
  ASSERT_GE(p.objective_history.size(), 2u);
  for (std::size_t i = 1; i < p.objective_history.size(); ++i)
    EXPECT_LE(p.objective_history[i], p.objective_history[i - 1] * (1 + 1e-12));
}

TEST(KMeans, SphericalObjectiveNonDecreasing) {
  auto x = testutil::random_set(2000, 6, 81);
  auto p = fit_kmeans(x, 20, 40, 3, ClusteringMode::kSpherical);
  for (std::size_t i = 1; i < p.objective_history.size(); ++i)
    EXPECT_GE(p.objective_history[i], p.objective_history[i - 1] * (1 - 1e-12));
}

TEST(KMeans, SameSeedBitIdentical) {
  auto x = testutil::random_set(1500, 10, 11);
  for (auto mode : {ClusteringMode::kStandard, ClusteringMode::kSpherical}) {
    set_worker_count(1);
    auto a = fit_kmeans(x, 30, 25, 77, mode);
    set_worker_count(4);
    auto b = fit_kmeans(x, 30, 25, 77, mode);
    set_worker_count(0);
    EXPECT_EQ(a.assignments, b.assignments);
    EXPECT_TRUE(std::equal(a.centroids.data().begin(), a.centroids.data().end(), b.centroids.data().begin()));
  }
}

TEST(KMeans, EveryShardNonEmptyAfterRepair) {
  // Many duplicates make empty clusters likely without repair.
  VectorSet x(60, 2);
  for (std::size_t i = 0; i < 60; ++i) {
    x.mutable_row(i)[0] = static_cast<float>(i % 3);
    x.mutable_row(i)[1] = i == 59 ? 5.0f : 0.0f;
  }
  auto p = fit_kmeans(x, 6, 25, 1, ClusteringMode::kStandard);
  expect_valid(p, 60, 6);
  EXPECT_EQ(std::count(p.empty_flags.begin(), p.empty_flags.end(), true), 0);
  for (const auto& s : p.shards) EXPECT_FALSE(s.empty());
}

TEST(KMeans, EdgeShardCounts) {
  auto x = testutil::random_set(40, 3, 12);
  auto one = fit_kmeans(x, 1, 25, 0, ClusteringMode::kSpherical);
  expect_valid(one, 40, 1);
  EXPECT_EQ(one.shards[0].size(), 40u);
  auto all = fit_kmeans(x, 40, 25, 0, ClusteringMode::kStandard);
  expect_valid(all, 40, 40);
  for (const auto& s : all.shards) EXPECT_EQ(s.size(), 1u);
}

TEST(KMeans, InvalidArgumentsRejected) {
  auto x = testutil::random_set(10, 3, 13);
  EXPECT_THROW(fit_kmeans(x, 0, 25, 0, ClusteringMode::kStandard), InvalidArgument);
  EXPECT_THROW(fit_kmeans(x, 11, 25, 0, ClusteringMode::kStandard), InvalidArgument);
  EXPECT_THROW(fit_kmeans(x, 2, 0, 0, ClusteringMode::kStandard), InvalidArgument);
  EXPECT_THROW(fit_kmeans(VectorSet(), 1, 25, 0, ClusteringMode::kStandard), InvalidArgument);
  EXPECT_EQ(parse_clustering_mode("standard"), ClusteringMode::kStandard);
  EXPECT_THROW(parse_clustering_mode("cosine"), InvalidArgument);
}

TEST(KMeans, SphericalAssignmentInvariantToScaling) {
  auto x = testutil::random_set(300, 5, 14);
  auto p = fit_kmeans(x, 7, 25, 2, ClusteringMode::kSpherical);
  auto base = assign_to_centroids(x, p.centroids, ClusteringMode::kSpherical);
  for (std::size_t i = 0; i < x.count(); i += 13) {
    for (float alpha : {0.01f, 3.0f, 250.0f}) {
      VectorSet y = x;
      for (auto& v : y.mutable_row(i)) v *= alpha;
      EXPECT_EQ(assign_to_centroids(y, p.centroids, ClusteringMode::kSpherical)[i], base[i]);
    }
  }
}

TEST(DefaultShardCount, Examples) {
  EXPECT_EQ(default_shard_count(1000000), 1000u);
  EXPECT_EQ(default_shard_count(1), 1u);
  EXPECT_EQ(default_shard_count(1048576), 1024u);
  EXPECT_EQ(default_shard_count(100000), 316u);
  EXPECT_THROW(default_shard_count(0), InvalidArgument);
}

TEST(ExtractShard, Shapes) {
  auto x = testutil::rows({{1, 1}, {2, 2}, {3, 3}});
  auto p = testutil::manual_partitioning(x, {0, 0, 2}, 3);
  auto s0 = extract_shard(x, p, 0);
  EXPECT_EQ(s0.count(), 2u);
  EXPECT_FLOAT_EQ(s0.row(1)[0], 2.0f);
  auto s1 = extract_shard(x, p, 1);
  EXPECT_EQ(s1.count(), 0u);
  EXPECT_EQ(s1.dim(), 2u);
  auto s2 = extract_shard(x, p, 2);
  EXPECT_EQ(s2.count(), 1u);
  EXPECT_FLOAT_EQ(s2.row(0)[1], 3.0f);
  auto whole = testutil::manual_partitioning(x, {0, 0, 0}, 1);
  auto all = extract_shard(x, whole, 0);
  EXPECT_TRUE(std::equal(all.data().begin(), all.data().end(), x.data().begin(), x.data().end()));
  EXPECT_THROW(extract_shard(x, p, 3), InvalidArgument);
}
