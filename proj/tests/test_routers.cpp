#include <gtest/gtest.h>

#include "optirouter/routers.hpp"
#include "test_util.hpp"

using namespace optirouter;

namespace {

double shard_score(const RouterModel& m, std::vector<float> q, ShardId i) { return score(m, q).scores.at(i); }

// Anisotropic loss sum_i h_par |r_par|^2 + |r_perp|^2 at representative c (2-D), r = x_i - c.
double anisotropic_loss(const std::vector<std::vector<double>>& pts, double T, double c0, double c1) {
  double loss = 0.0;
  for (const auto& x : pts) {
    const double sq = x[0] * x[0] + x[1] * x[1];
    if (sq <= T * T) continue;
    const double s = T * T / sq, h = s / (1.0 - s);  // (d - 1) = 1
    const double r0 = x[0] - c0, r1 = x[1] - c1;
    const double par = (r0 * x[0] + r1 * x[1]) / std::sqrt(sq);
    const double total = r0 * r0 + r1 * r1;
    loss += h * par * par + (total - par * par);
  }
  return loss;
}

// Coarse-to-fine grid search.
std::pair<double, double> grid_minimize(const std::vector<std::vector<double>>& pts, double T) {
  double c0 = 0.0, c1 = 0.0, span = 8.0;
  for (int level = 0; level < 40; ++level) {
    double best = INFINITY, b0 = c0, b1 = c1;
    for (int i = -10; i <= 10; ++i)
      for (int j = -10; j <= 10; ++j) {
        const double a = c0 + span * i / 10.0, b = c1 + span * j / 10.0;
        const double l = anisotropic_loss(pts, T, a, b);
        if (l < best) {
          best = l;
          b0 = a;
          b1 = b;
        }
      }
    c0 = b0;
    c1 = b1;
    span /= 3.0;
  }
  return {c0, c1};
}

}  // namespace

TEST(MeanRouter, IdenticalPointsGiveThatPoint) {
  auto x = testutil::rows({{0.3f, -0.2f}, {0.3f, -0.2f}, {0.3f, -0.2f}});
  auto m = build_mean(testutil::manual_partitioning(x, {0, 0, 0}, 1), x);
  EXPECT_FLOAT_EQ(m.shards[0].representatives[0], 0.3f);
  EXPECT_FLOAT_EQ(m.shards[0].representatives[1], -0.2f);
}

TEST(MeanRouter, ScoreIsInnerProductWithMean) {
  auto x = testutil::rows({{1, 0}, {0, 1}});
  auto m = build_mean(testutil::manual_partitioning(x, {0, 0}, 1), x);
  EXPECT_DOUBLE_EQ(shard_score(m, {1, 0}, 0), 0.5);
}

TEST(MeanRouter, EmptyShardRankedLast) {
  auto x = testutil::rows({{-1, 0}, {-2, 0}});
  auto p = testutil::manual_partitioning(x, {1, 2}, 3);
  for (const auto& model : {build_mean(p, x), build_normalized_mean(p, x), build_optimist(p, x, 1), build_scann(p, x),
                            build_subpartition(p, x, 0)}) {
    auto s = score(model, std::vector<float>{1, 0});
    EXPECT_EQ(s.order.back(), 0u) << model.name();
    EXPECT_TRUE(model.shards[0].flags & kShardEmpty);
    EXPECT_EQ(s.scores[0], -std::numeric_limits<double>::infinity());
  }
}

TEST(NormalizedMeanRouter, Examples) {
  auto x = testutil::rows({{0.6f, 0.8f}, {0.6f, 0.8f}, {0.2f, 0.3f}, {0.4f, 0.5f}, {1, 0}, {-1, 0}});
  auto p = testutil::manual_partitioning(x, {0, 0, 1, 1, 2, 2}, 3);
  auto mean = build_mean(p, x), norm = build_normalized_mean(p, x);
  const std::vector<float> q{1, 0};
  EXPECT_NEAR(shard_score(norm, q, 0), shard_score(mean, q, 0), 1e-7);
  EXPECT_NEAR(shard_score(norm, q, 1), 0.6, 1e-6);
  EXPECT_NEAR(shard_score(norm, q, 1) * 0.5, shard_score(mean, q, 1), 1e-6);
  EXPECT_EQ(shard_score(norm, q, 2), 0.0);
  EXPECT_TRUE(norm.shards[2].flags & kShardFallback);
  EXPECT_FALSE(norm.shards[0].flags & kShardFallback);
}

TEST(ScannRouter, EqualWeightsGiveCentroid) {
  // All points on the unit circle, T = 1/sqrt(d) makes h_par = 1 for each point.
  auto x = testutil::rows({{1, 0}, {0.6f, 0.8f}, {0, 1}, {-0.8f, 0.6f}});
  auto rep = scann_representative(x, 1.0 / std::sqrt(2.0));
  const auto mean = compute_moments(x, false).mu;
  EXPECT_NEAR(rep[0], mean[0], 1e-6);
  EXPECT_NEAR(rep[1], mean[1], 1e-6);
}

TEST(ScannRouter, SinglePointProportional) {
  auto x = testutil::rows({{0.3f, 1.2f, -0.4f}});
  auto rep = scann_representative(x, 0.5);
  EXPECT_NEAR(rep[0] * 1.2, rep[1] * 0.3, 1e-6);
  EXPECT_NEAR(rep[2] * 0.3, rep[0] * -0.4, 1e-6);
  EXPECT_GT(rep[0] / 0.3, 0.0);
}

TEST(ScannRouter, MatchesGridMinimizationOfAnisotropicLoss) {
  for (const auto& pts : std::vector<std::vector<std::vector<double>>>{
           {{1.0, 0.2}, {0.7, 0.9}, {1.5, -0.3}},
           {{0.9, 0.1}, {0.2, 1.1}, {-0.6, 0.8}},
           {{2.0, 0.0}, {1.8, 0.5}, {0.6, 0.1}}}) {
    VectorSet x(3, 2);
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 2; ++j) x.mutable_row(i)[j] = static_cast<float>(pts[i][j]);
    bool fallback = true;
    auto rep = scann_representative(x, 0.5, &fallback);
    EXPECT_FALSE(fallback);
    auto [g0, g1] = grid_minimize(testutil::to_nested(x), 0.5);
    EXPECT_NEAR(rep[0], g0, 1e-5);
    EXPECT_NEAR(rep[1], g1, 1e-5);
  }
}

TEST(ScannRouter, AllPointsInsideThresholdFallBack) {
  auto x = testutil::rows({{0.1f, 0.1f}, {0.2f, 0.0f}});
  bool fallback = false;
  auto rep = scann_representative(x, 0.5, &fallback);
  EXPECT_TRUE(fallback);
  EXPECT_NEAR(rep[0], 0.15, 1e-7);
  auto m = build_scann(testutil::manual_partitioning(x, {0, 0}, 1), x, 0.5);
  EXPECT_TRUE(m.shards[0].flags & kShardFallback);
}

TEST(SubPartitionRouter, FewPointsUseThePointsThemselves) {
  auto x = testutil::rows({{1, 0}, {0, 1}, {0.5f, 0.5f}});
  auto m = build_subpartition(testutil::manual_partitioning(x, {0, 0, 0}, 1), x, 2);
  EXPECT_EQ(m.shards[0].representative_count(2), 3u);
  EXPECT_DOUBLE_EQ(shard_score(m, {0, 1}, 0), 1.0);
  EXPECT_DOUBLE_EQ(shard_score(m, {0.6f, 0.8f}, 0), inner_product(std::vector<float>{0.6f, 0.8f}, std::vector<float>{0, 1}));
}

TEST(SubPartitionRouter, TwoBlobsMatchExhaustiveOracle) {
  auto x = testutil::rows({{5, 5}, {5.2f, 5.1f}, {4.9f, 5.3f}, {5.1f, 4.8f}, {-3, 1}, {-3.2f, 1.1f}, {-2.9f, 0.8f}});
  const auto [cost, labels] = oracle::exhaustive_kmeans(testutil::to_nested(x), 2);
  std::vector<std::vector<double>> cents(2, std::vector<double>(2, 0.0));
  std::vector<int> cnt(2, 0);
  for (std::size_t i = 0; i < x.count(); ++i) {
    ++cnt[static_cast<std::size_t>(labels[i])];
    for (std::size_t j = 0; j < 2; ++j) cents[static_cast<std::size_t>(labels[i])][j] += x.row(i)[j];
  }
  auto p = testutil::manual_partitioning(x, std::vector<ShardId>(x.count(), 0), 1);
  for (auto stat : {SubPartitionStat::kMax, SubPartitionStat::kMean}) {
    auto m = build_subpartition(p, x, 0, stat, 3);
    EXPECT_EQ(m.shards[0].representative_count(2), 2u);
    for (const auto& q : {std::vector<float>{1, 0}, {0, 1}, {-0.6f, 0.8f}}) {
      std::vector<double> ips;
      for (std::size_t k = 0; k < 2; ++k) ips.push_back((q[0] * cents[k][0] + q[1] * cents[k][1]) / cnt[k]);
      const double expected = stat == SubPartitionStat::kMax ? std::max(ips[0], ips[1]) : 0.5 * (ips[0] + ips[1]);
      EXPECT_NEAR(shard_score(m, q, 0), expected, 1e-5);
    }
  }
}

TEST(SubPartitionRouter, IdenticalPointsEqualMean) {
  auto x = testutil::rows({{0.4f, 0.2f}, {0.4f, 0.2f}, {0.4f, 0.2f}, {0.4f, 0.2f}, {0.4f, 0.2f}});
  auto p = testutil::manual_partitioning(x, {0, 0, 0, 0, 0}, 1);
  auto sub = build_subpartition(p, x, 1), mean = build_mean(p, x);
  for (const auto& q : {std::vector<float>{1, 0}, {0.6f, -0.8f}})
    EXPECT_NEAR(shard_score(sub, q, 0), shard_score(mean, q, 0), 1e-7);
}

TEST(OptimistRouter, WorkedExampleChebyshev) {
  auto x = testutil::rows({{0.1f, 0}, {0.3f, 0}});  // mu = (0.2, 0), sigma = diag(0.01, 0)
  auto p = testutil::manual_partitioning(x, {0, 0}, 1);
  for (std::size_t t : {0, 1, 2}) {
    auto m = build_optimist(p, x, t, 0.8);
    EXPECT_NEAR(score_optimist(m, std::span<const float>(std::vector<float>{1, 0})).scores[0], 0.5, 1e-6);
  }
  auto m0 = build_optimist(p, x, 2, 0.0);
  EXPECT_NEAR(shard_score(m0, {1, 0}, 0), 0.3, 1e-6);
  EXPECT_DOUBLE_EQ(chebyshev_optimism_factor(0.8), 3.0);
}

TEST(OptimistRouter, FullRankStoresCovariance) {
  auto x = testutil::random_set(50, 4, 31);
  auto p = testutil::manual_partitioning(x, std::vector<ShardId>(50, 0), 1);
  auto m = build_optimist(p, x, 4);
  EXPECT_TRUE(m.params.full_rank);
  EXPECT_EQ(m.shards[0].covariance.size(), 16u);
  auto sketch = build_optimist(p, x, 2);
  EXPECT_FALSE(sketch.params.full_rank);
  EXPECT_TRUE(sketch.shards[0].covariance.empty());
  EXPECT_THROW(build_optimist(p, x, 5), InvalidArgument);
}

TEST(OptimistRouter, SingletonEqualsMean) {
  auto x = testutil::rows({{0.3f, 0.4f}, {1, 0}, {0, 1}});
  auto p = testutil::manual_partitioning(x, {0, 1, 1}, 2);
  auto mean = build_mean(p, x);
  for (std::size_t t : {0, 1, 2})
    for (auto kind : {RouterKind::kOptimist, RouterKind::kOptimistGaussian}) {
      auto m = build_optimist(p, x, t, 0.8, kind);
      EXPECT_NEAR(shard_score(m, {0.6f, 0.8f}, 0), shard_score(mean, {0.6f, 0.8f}, 0), 1e-7);
    }
}

TEST(OptimistRouter, DeltaOneRejected) {
  auto x = testutil::rows({{1, 0}, {0, 1}});
  auto p = testutil::manual_partitioning(x, {0, 0}, 1);
  EXPECT_THROW(build_optimist(p, x, 1, 1.0), InvalidArgument);
  EXPECT_THROW(build_optimist(p, x, 1, -0.1), InvalidArgument);
  EXPECT_THROW(chebyshev_optimism_factor(1.0), InvalidArgument);
  EXPECT_THROW(gaussian_optimism_factor(1.0), InvalidArgument);
  auto m = build_mean(p, x);
  EXPECT_THROW(score_optimist(m, std::span<const float>(std::vector<float>{1, 0})), InvalidArgument);
}

TEST(OptimistGaussianRouter, Examples) {
  auto x = testutil::rows({{1.2f, 0}, {-0.8f, 0}});  // mu = (0.2, 0), var along e1 = 1
  auto p = testutil::manual_partitioning(x, {0, 0}, 1);
  const std::vector<float> q{1, 0};
  auto g0 = build_optimist_gaussian(p, x, 2, 0.0);
  EXPECT_NEAR(score_optimist_gaussian(g0, std::span<const float>(q)).scores[0], 0.2, 1e-7);
  auto g = build_optimist_gaussian(p, x, 2, 0.95);
  const double z = oracle::normal_quantile(0.975);
  EXPECT_NEAR(z, 1.95996, 1e-5);
  EXPECT_NEAR(shard_score(g, q, 0), 0.2 + z, 1e-6);
}

TEST(OptimistGaussianRouter, FactorMatchesOracleAndBelowChebyshev) {
  for (int i = 1; i < 100; ++i) {
    const double delta = i / 100.0;
    EXPECT_NEAR(gaussian_optimism_factor(delta), oracle::normal_quantile((1 + delta) / 2), 1e-9);
    EXPECT_LT(gaussian_optimism_factor(delta), chebyshev_optimism_factor(delta));
  }
  auto x = testutil::random_set(40, 3, 32);
  auto p = testutil::manual_partitioning(x, std::vector<ShardId>(40, 0), 1);
  std::mt19937_64 rng(1);
  for (double delta : {0.1, 0.5, 0.8, 0.99}) {
    auto gauss = build_optimist_gaussian(p, x, 3, delta), cheb = build_optimist(p, x, 3, delta);
    auto q = testutil::unit_query(3, rng);
    EXPECT_LT(shard_score(gauss, q, 0), shard_score(cheb, q, 0));
  }
}

TEST(Route, PrefixDominanceAndBounds) {
  auto x = testutil::random_set(400, 5, 33);
  auto p = fit_kmeans(x, 9, 25, 1, ClusteringMode::kSpherical);
  std::mt19937_64 rng(2);
  for (const auto& model : {build_mean(p, x), build_optimist(p, x, 2), build_subpartition(p, x, 1, SubPartitionStat::kMax, 4)}) {
    auto q = testutil::unit_query(5, rng);
    auto all = route(model, q, 9);
    std::vector<ShardId> sorted = all;
    std::sort(sorted.begin(), sorted.end());
    for (ShardId i = 0; i < 9; ++i) EXPECT_EQ(sorted[i], i);
    for (std::size_t l = 1; l < 9; ++l) {
      auto part = route(model, q, l);
      EXPECT_TRUE(std::equal(part.begin(), part.end(), all.begin()));
    }
    EXPECT_THROW(route(model, q, 0), InvalidArgument);
    EXPECT_THROW(route(model, q, 10), InvalidArgument);
  }
  auto y = testutil::rows({{5, 0}, {0.1f, 0.1f}, {0, 0.2f}});
  auto py = testutil::manual_partitioning(y, {0, 1, 2}, 3);
  EXPECT_EQ(route(build_mean(py, y), std::vector<float>{1, 0}, 1), (std::vector<ShardId>{0}));
}

TEST(RouterParams, NamesAndValidation) {
  RouterParams p{RouterKind::kOptimist};
  p.rank = 4;
  EXPECT_EQ(p.name(), "Optimist(t=4;delta=0.8)");
  p.full_rank = true;
  EXPECT_EQ(p.name(), "Optimist(t=d;delta=0.8)");
  EXPECT_EQ(parse_router_kind("optimist-gaussian"), RouterKind::kOptimistGaussian);
  EXPECT_THROW(parse_router_kind("oracle"), InvalidArgument);
  RouterParams s{RouterKind::kScann};
  s.threshold = 1.0;
  EXPECT_THROW(validate(s), InvalidArgument);
  EXPECT_EQ(parse_subpartition_stat("mean"), SubPartitionStat::kMean);
  EXPECT_THROW(parse_subpartition_stat("median"), InvalidArgument);
}
