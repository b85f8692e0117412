#pragma once

// Lloyd's k-means (standard and spherical) producing the shard assignment of a dataset.

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "optirouter/core.hpp"

namespace optirouter {

enum class ClusteringMode : std::uint8_t { kStandard = 0, kSpherical = 1 };

inline const char* to_string(ClusteringMode mode) {
  return mode == ClusteringMode::kSpherical ? "spherical" : "standard";
}

inline ClusteringMode parse_clustering_mode(const std::string& s) {
  if (s == "spherical") return ClusteringMode::kSpherical;
  if (s == "standard") return ClusteringMode::kStandard;
  throw InvalidArgument("unknown clustering mode '" + s + "' (expected standard|spherical)");
}

struct Partitioning {
  std::vector<ShardId> assignments;         // per point, in [0, C)
  std::vector<std::vector<PointId>> shards;  // ascending point ids per shard
  VectorSet centroids;                       // C x d
  ClusteringMode mode = ClusteringMode::kStandard;
  std::vector<bool> empty_flags;             // only set when a shard ended up empty
  /// Clustering objective after each assignment step (sum of squared distances in standard
  /// mode, sum of inner products with the assigned centroid in spherical mode).
  std::vector<double> objective_history;

  std::size_t shard_count() const noexcept { return shards.size(); }
  std::size_t dim() const noexcept { return centroids.dim(); }
  std::size_t point_count() const noexcept { return assignments.size(); }
  std::size_t shard_size(ShardId i) const { return shards.at(i).size(); }
};

struct KMeansOptions {
  std::size_t shard_count = 1;
  std::size_t iterations = 25;
  std::uint64_t seed = 0;
  ClusteringMode mode = ClusteringMode::kSpherical;
};

/// round(sqrt(m)), at least 1.
inline std::size_t default_shard_count(std::size_t m) {
  if (m == 0) throw InvalidArgument("default_shard_count: m must be >= 1");
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(m)))));
}

namespace detail {

// Uniform double in [0, 1) from the top 53 bits; independent of the standard library's distributions.
inline double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double squared_distance(std::span<const float> a, std::span<const float> b) {
  double acc = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    const double diff = static_cast<double>(a[j]) - static_cast<double>(b[j]);
    acc += diff * diff;
  }
  return acc;
}

// Lower is better for both modes: squared distance, or negated inner product with a unit centroid.
inline double assignment_cost(std::span<const float> x, std::span<const float> c, double c_sqnorm,
                              double x_sqnorm, ClusteringMode mode) {
  const double ip = inner_product(x, c);
  if (mode == ClusteringMode::kSpherical) return -ip;
  return std::max(0.0, x_sqnorm - 2.0 * ip + c_sqnorm);
}

inline std::vector<float> direction_of(std::span<const float> x) {
  const double n = std::sqrt(squared_norm(x));
  std::vector<float> out(x.begin(), x.end());
  if (n > 0.0)
    for (float& v : out) v = static_cast<float>(v / n);
  return out;
}

// k-means++ seeding. Spherical mode seeds on point directions.
inline VectorSet seed_centroids(const VectorSet& x, std::size_t c, ClusteringMode mode,
                                std::mt19937_64& rng) {
  const std::size_t m = x.count(), d = x.dim();
  VectorSet basis = x;
  if (mode == ClusteringMode::kSpherical)
    for (std::size_t i = 0; i < m; ++i) {
      auto dir = direction_of(x.row(i));
      std::copy(dir.begin(), dir.end(), basis.mutable_row(i).begin());
    }

  VectorSet centroids(c, d);
  std::vector<double> nearest(m, std::numeric_limits<double>::infinity());
  std::size_t pick = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(m));
  for (std::size_t k = 0; k < c; ++k) {
    auto src = basis.row(pick);
    std::copy(src.begin(), src.end(), centroids.mutable_row(k).begin());
    if (k + 1 == c) break;
    auto ck = centroids.row(k);
    parallel_for(m, [&](std::size_t i) { nearest[i] = std::min(nearest[i], squared_distance(basis.row(i), ck)); });
    double total = 0.0;
    for (double v : nearest) total += v;
    if (!(total > 0.0)) {
      // Every remaining point coincides with a chosen centroid.
      pick = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(m));
      continue;
    }
    double target = uniform01(rng) * total, run = 0.0;
    pick = m - 1;
    for (std::size_t i = 0; i < m; ++i) {
      run += nearest[i];
      if (run > target && nearest[i] > 0.0) {
        pick = i;
        break;
      }
    }
  }
  if (mode == ClusteringMode::kSpherical)
    for (std::size_t k = 0; k < c; ++k) {
      auto dir = direction_of(centroids.row(k));
      std::copy(dir.begin(), dir.end(), centroids.mutable_row(k).begin());
    }
  return centroids;
}

}  // namespace detail

/// Assigns each point to its best centroid (min distance or max inner product); ties go to the
/// lower shard id. Writes per-point costs into `costs` when non-null.
inline std::vector<ShardId> assign_to_centroids(const VectorSet& x, const VectorSet& centroids,
                                                ClusteringMode mode, std::vector<double>* costs = nullptr) {
  if (x.dim() != centroids.dim() && !x.empty())
    throw InvalidArgument("assign_to_centroids: dimension mismatch");
  const std::size_t m = x.count(), c = centroids.count();
  std::vector<double> c_sq(c);
  for (std::size_t k = 0; k < c; ++k) c_sq[k] = squared_norm(centroids.row(k));
  std::vector<ShardId> out(m);
  if (costs) costs->assign(m, 0.0);
  parallel_for(m, [&](std::size_t i) {
    auto xi = x.row(i);
    const double x_sq = mode == ClusteringMode::kStandard ? squared_norm(xi) : 0.0;
    double best = std::numeric_limits<double>::infinity();
    ShardId arg = 0;
    for (std::size_t k = 0; k < c; ++k) {
      const double cost = detail::assignment_cost(xi, centroids.row(k), c_sq[k], x_sq, mode);
      if (cost < best) {
        best = cost;
        arg = static_cast<ShardId>(k);
      }
    }
    out[i] = arg;
    if (costs) (*costs)[i] = best;
  });
  return out;
}

namespace detail {

inline void rebuild_shards(Partitioning& p, std::size_t c) {
  p.shards.assign(c, {});
  for (std::size_t i = 0; i < p.assignments.size(); ++i)
    p.shards[p.assignments[i]].push_back(static_cast<PointId>(i));
}

inline std::vector<double> shard_mean(const VectorSet& x, const std::vector<PointId>& ids) {
  std::vector<double> acc(x.dim(), 0.0);
  for (PointId id : ids) {
    auto r = x.row(id);
    for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += r[j];
  }
  if (!ids.empty())
    for (double& v : acc) v /= static_cast<double>(ids.size());
  return acc;
}

// Writes the centroid of shard k from its points. Returns false when the shard is empty.
inline bool update_centroid(const VectorSet& x, Partitioning& p, std::size_t k) {
  if (p.shards[k].empty()) return false;
  auto mean = shard_mean(x, p.shards[k]);
  auto dst = p.centroids.mutable_row(k);
  if (p.mode == ClusteringMode::kSpherical) {
    double n = 0.0;
    for (double v : mean) n += v * v;
    n = std::sqrt(n);
    if (!(n > 0.0)) return true;  // zero mean direction: keep the previous unit centroid
    for (std::size_t j = 0; j < mean.size(); ++j) dst[j] = static_cast<float>(mean[j] / n);
  } else {
    for (std::size_t j = 0; j < mean.size(); ++j) dst[j] = static_cast<float>(mean[j]);
  }
  return true;
}

// Moves the worst-served point of a multi-point shard into each empty shard.
inline void repair_empty_shards(const VectorSet& x, Partitioning& p, const std::vector<double>& costs_in) {
  std::vector<double> costs = costs_in;
  const std::size_t c = p.shards.size();
  for (std::size_t k = 0; k < c; ++k) {
    if (!p.shards[k].empty()) continue;
    std::size_t worst = VectorSet::npos;
    double worst_cost = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < p.assignments.size(); ++i) {
      if (p.shards[p.assignments[i]].size() < 2) continue;
      if (costs[i] > worst_cost) {
        worst_cost = costs[i];
        worst = i;
      }
    }
    if (worst == VectorSet::npos) return;
    const ShardId donor = p.assignments[worst];
    auto& donor_ids = p.shards[donor];
    donor_ids.erase(std::find(donor_ids.begin(), donor_ids.end(), static_cast<PointId>(worst)));
    p.assignments[worst] = static_cast<ShardId>(k);
    p.shards[k].push_back(static_cast<PointId>(worst));
    costs[worst] = -std::numeric_limits<double>::infinity();
    auto src = p.mode == ClusteringMode::kSpherical ? direction_of(x.row(worst))
                                                    : std::vector<float>(x.row(worst).begin(), x.row(worst).end());
    std::copy(src.begin(), src.end(), p.centroids.mutable_row(k).begin());
    update_centroid(x, p, donor);
  }
}

}  // namespace detail

/// Lloyd's iterations from k-means++ seeding; stops early once assignments are stable.
/// Deterministic for a given seed regardless of worker count.
inline Partitioning fit_kmeans(const VectorSet& x, const KMeansOptions& opt) {
  const std::size_t m = x.count(), c = opt.shard_count;
  if (m == 0) throw InvalidArgument("fit_kmeans: empty input");
  if (c < 1) throw InvalidArgument("fit_kmeans: C must be >= 1");
  if (c > m)
    throw InvalidArgument("fit_kmeans: C=" + std::to_string(c) + " exceeds point count m=" + std::to_string(m));
  if (opt.iterations < 1) throw InvalidArgument("fit_kmeans: iters must be >= 1");

  std::mt19937_64 rng(opt.seed);
  Partitioning p;
  p.mode = opt.mode;
  p.centroids = detail::seed_centroids(x, c, opt.mode, rng);

  std::vector<double> costs;
  for (std::size_t iter = 0; iter < opt.iterations; ++iter) {
    auto next = assign_to_centroids(x, p.centroids, opt.mode, &costs);
    const bool stable = iter > 0 && next == p.assignments;
    p.assignments = std::move(next);
    double objective = 0.0;
    for (double v : costs) objective += opt.mode == ClusteringMode::kSpherical ? -v : v;
    p.objective_history.push_back(objective);
    detail::rebuild_shards(p, c);
    if (stable) break;
    for (std::size_t k = 0; k < c; ++k) detail::update_centroid(x, p, k);
    detail::repair_empty_shards(x, p, costs);
  }
  // Final centroids are consistent with the final assignments.
  for (std::size_t k = 0; k < c; ++k) detail::update_centroid(x, p, k);
  p.empty_flags.assign(c, false);
  for (std::size_t k = 0; k < c; ++k) p.empty_flags[k] = p.shards[k].empty();
  return p;
}

inline Partitioning fit_kmeans(const VectorSet& x, std::size_t shard_count, std::size_t iterations,
                               std::uint64_t seed, ClusteringMode mode) {
  return fit_kmeans(x, KMeansOptions{shard_count, iterations, seed, mode});
}

/// Rebuilds shard lists from an assignment array (used after deserialization).
inline Partitioning make_partitioning(std::vector<ShardId> assignments, VectorSet centroids, ClusteringMode mode) {
  Partitioning p;
  p.mode = mode;
  const std::size_t c = centroids.count();
  for (ShardId a : assignments)
    if (a >= c) throw DataError("partitioning: assignment " + std::to_string(a) + " out of range");
  p.assignments = std::move(assignments);
  p.centroids = std::move(centroids);
  detail::rebuild_shards(p, c);
  p.empty_flags.assign(c, false);
  for (std::size_t k = 0; k < c; ++k) p.empty_flags[k] = p.shards[k].empty();
  return p;
}

/// Dense copy of the points of shard i, in the order listed by the partitioning.
inline VectorSet extract_shard(const VectorSet& x, const Partitioning& p, ShardId i) {
  if (i >= p.shard_count())
    throw InvalidArgument("extract_shard: shard id " + std::to_string(i) + " out of range [0, " +
                          std::to_string(p.shard_count()) + ")");
  const auto& ids = p.shards[i];
  std::vector<float> data;
  data.reserve(ids.size() * x.dim());
  for (PointId id : ids) {
    auto r = x.row(id);
    data.insert(data.end(), r.begin(), r.end());
  }
  return VectorSet(std::move(data), ids.size(), x.dim());
}

}  // namespace optirouter
