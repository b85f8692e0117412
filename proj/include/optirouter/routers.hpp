#pragma once

// Routing functions: per-shard state built from a partitioning, a score for every shard given
// a query, and the top-l shards to probe.

#include <boost/math/distributions/normal.hpp>

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "optirouter/core.hpp"
#include "optirouter/moments_sketch.hpp"
#include "optirouter/partitioner.hpp"

namespace optirouter {

enum class RouterKind : std::uint8_t {
  kMean = 0,
  kNormalizedMean = 1,
  kScann = 2,
  kSubPartition = 3,
  kOptimist = 4,
  kOptimistGaussian = 5,
};

enum class SubPartitionStat : std::uint8_t { kMax = 0, kMean = 1 };

inline const char* to_string(RouterKind kind) {
  switch (kind) {
    case RouterKind::kMean: return "mean";
    case RouterKind::kNormalizedMean: return "normalized-mean";
    case RouterKind::kScann: return "scann";
    case RouterKind::kSubPartition: return "subpartition";
    case RouterKind::kOptimist: return "optimist";
    case RouterKind::kOptimistGaussian: return "optimist-gaussian";
  }
  return "unknown";
}

inline RouterKind parse_router_kind(const std::string& s) {
  for (auto k : {RouterKind::kMean, RouterKind::kNormalizedMean, RouterKind::kScann, RouterKind::kSubPartition,
                 RouterKind::kOptimist, RouterKind::kOptimistGaussian})
    if (s == to_string(k)) return k;
  throw InvalidArgument("unknown router kind '" + s + "'");
}

inline const char* to_string(SubPartitionStat s) { return s == SubPartitionStat::kMean ? "mean" : "max"; }

inline SubPartitionStat parse_subpartition_stat(const std::string& s) {
  if (s == "max") return SubPartitionStat::kMax;
  if (s == "mean") return SubPartitionStat::kMean;
  throw InvalidArgument("unknown subpartition statistic '" + s + "' (expected max|mean)");
}

/// A router variant and its parameters. `full_rank` marks t = d (full covariance).
struct RouterParams {
  RouterKind kind = RouterKind::kMean;
  std::size_t rank = 0;
  bool full_rank = false;
  double delta = 0.8;
  double threshold = 0.5;
  SubPartitionStat stat = SubPartitionStat::kMax;
  std::uint64_t seed = 0;  // sub-partition clustering only

  /// Display name; no commas so it can sit in a CSV column.
  std::string name() const {
    std::ostringstream os;
    const std::string t = full_rank ? "d" : std::to_string(rank);
    switch (kind) {
      case RouterKind::kMean: os << "Mean"; break;
      case RouterKind::kNormalizedMean: os << "NormalizedMean"; break;
      case RouterKind::kScann: os << "Scann(T=" << threshold << ")"; break;
      case RouterKind::kSubPartition: os << "SubPartition(t=" << t << ";" << to_string(stat) << ")"; break;
      case RouterKind::kOptimist: os << "Optimist(t=" << t << ";delta=" << delta << ")"; break;
      case RouterKind::kOptimistGaussian: os << "OptimistGaussian(t=" << t << ";delta=" << delta << ")"; break;
    }
    return os.str();
  }
};

inline constexpr double kDefaultDelta = 0.8;
inline constexpr double kDefaultScannThreshold = 0.5;

inline void validate(const RouterParams& p) {
  const bool optimist = p.kind == RouterKind::kOptimist || p.kind == RouterKind::kOptimistGaussian;
  if (optimist && !(p.delta >= 0.0 && p.delta < 1.0))
    throw InvalidArgument("optimism delta must lie in [0, 1), got " + std::to_string(p.delta));
  if (p.kind == RouterKind::kScann && !(p.threshold >= 0.0 && p.threshold < 1.0))
    throw InvalidArgument("scann threshold T must lie in [0, 1), got " + std::to_string(p.threshold));
}

enum ShardFlags : std::uint8_t {
  kShardEmpty = 1,
  kShardFallback = 2,  // degenerate input, score falls back to the Mean router's
};

struct ShardState {
  std::uint32_t size = 0;
  std::uint8_t flags = 0;
  /// Mean / NormalizedMean / Scann: one row. SubPartition: one row per sub-shard.
  std::vector<float> representatives;
  /// Optimist variants.
  MaskedSketch sketch;
  /// Optimist with t = d: full d x d covariance, row-major.
  std::vector<float> covariance;

  std::size_t representative_count(std::size_t d) const noexcept { return d ? representatives.size() / d : 0; }
};

struct RouterModel {
  RouterParams params;
  std::size_t shard_count = 0;
  std::size_t dim = 0;
  std::vector<ShardState> shards;

  std::string name() const { return params.name(); }
};

/// Per-shard scores and the induced ranking (score descending, shard id ascending).
struct ShardScores {
  std::vector<double> scores;
  std::vector<ShardId> order;
};

// ---------------------------------------------------------------------------
// Builders

namespace detail {

inline std::vector<float> to_float(const Eigen::VectorXd& v) {
  return std::vector<float>(v.data(), v.data() + v.size());
}

template <class Fn>
RouterModel build_each_shard(const RouterParams& params, const Partitioning& p, const VectorSet& x, Fn&& fill) {
  validate(params);
  if (x.count() != p.point_count()) throw InvalidArgument("router build: partitioning does not match dataset size");
  if (x.dim() != p.dim()) throw InvalidArgument("router build: partitioning does not match dataset dimension");
  RouterModel model;
  model.params = params;
  model.shard_count = p.shard_count();
  model.dim = x.dim();
  model.shards.resize(model.shard_count);
  parallel_for(model.shard_count, [&](std::size_t i) {
    ShardState& st = model.shards[i];
    st.size = static_cast<std::uint32_t>(p.shards[i].size());
    if (st.size == 0) {
      st.flags |= kShardEmpty;
      return;
    }
    fill(st, extract_shard(x, p, static_cast<ShardId>(i)), i);
  });
  return model;
}

inline double scann_parallel_weight(double sq_norm, double threshold, std::size_t d) {
  const double s = threshold * threshold / sq_norm;
  return static_cast<double>(d - 1) * s / (1.0 - s);
}

}  // namespace detail

inline RouterModel build_mean(const Partitioning& p, const VectorSet& x) {
  return detail::build_each_shard({RouterKind::kMean}, p, x, [](ShardState& st, const VectorSet& shard, std::size_t) {
    st.representatives = detail::to_float(compute_moments(shard, false).mu);
  });
}

inline RouterModel build_normalized_mean(const Partitioning& p, const VectorSet& x) {
  return detail::build_each_shard(
      {RouterKind::kNormalizedMean}, p, x, [](ShardState& st, const VectorSet& shard, std::size_t) {
        const Eigen::VectorXd mu = compute_moments(shard, false).mu;
        const double norm = mu.norm();
        if (norm > 0.0) {
          st.representatives = detail::to_float(mu / norm);
        } else {
          st.representatives = detail::to_float(mu);
          st.flags |= kShardFallback;
        }
      });
}

/// Score-aware representative minimizing sum_i h_par(x_i) |r_par|^2 + |r_perp|^2 over the shard,
/// where r = x_i - c is split along and across x_i. Closed form:
///   c = (sum_i I + (h_par(x_i) - 1) x_i x_i^T / |x_i|^2)^-1 sum_i h_par(x_i) x_i,
/// h_par(x) = (d - 1) s / (1 - s), s = T^2 / |x|^2. Points with |x| <= T carry no weight.
inline Eigen::VectorXd scann_representative(const VectorSet& shard, double threshold, bool* fallback = nullptr) {
  const auto d = static_cast<Eigen::Index>(shard.dim());
  Eigen::MatrixXd lhs = Eigen::MatrixXd::Zero(d, d);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(d);
  for (std::size_t i = 0; i < shard.count(); ++i) {
    auto r = shard.row(i);
    Eigen::VectorXd xi(d);
    for (Eigen::Index j = 0; j < d; ++j) xi[j] = r[static_cast<std::size_t>(j)];
    const double sq = xi.squaredNorm();
    if (!(sq > threshold * threshold)) continue;
    const double h_par = detail::scann_parallel_weight(sq, threshold, shard.dim());
    lhs.diagonal().array() += 1.0;
    lhs += (h_par - 1.0) / sq * xi * xi.transpose();
    rhs += h_par * xi;
  }
  const Eigen::VectorXd mu = compute_moments(shard, false).mu;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(lhs, Eigen::EigenvaluesOnly);
  const double hi = eig.eigenvalues().cwiseAbs().maxCoeff();
  const double lo = eig.eigenvalues().minCoeff();
  if (!(hi > 0.0) || !(lo > 1e-12 * hi)) {
    if (fallback) *fallback = true;
    return mu;
  }
  if (fallback) *fallback = false;
  return lhs.ldlt().solve(rhs);
}

inline RouterModel build_scann(const Partitioning& p, const VectorSet& x, double threshold = kDefaultScannThreshold) {
  RouterParams params{RouterKind::kScann};
  params.threshold = threshold;
  return detail::build_each_shard(params, p, x, [threshold](ShardState& st, const VectorSet& shard, std::size_t) {
    bool fallback = false;
    st.representatives = detail::to_float(scann_representative(shard, threshold, &fallback));
    if (fallback) st.flags |= kShardFallback;
  });
}

inline RouterModel build_subpartition(const Partitioning& p, const VectorSet& x, std::size_t t,
                                      SubPartitionStat stat = SubPartitionStat::kMax, std::uint64_t seed = 0,
                                      std::size_t iterations = 25) {
  RouterParams params{RouterKind::kSubPartition};
  params.rank = t;
  params.stat = stat;
  params.seed = seed;
  return detail::build_each_shard(params, p, x, [&](ShardState& st, const VectorSet& shard, std::size_t i) {
    const std::size_t sub = t + 2;
    if (shard.count() <= sub) {
      st.representatives.assign(shard.data().begin(), shard.data().end());
      return;
    }
    const auto fit = fit_kmeans(shard, KMeansOptions{sub, iterations, seed + i, ClusteringMode::kStandard});
    st.representatives.assign(fit.centroids.data().begin(), fit.centroids.data().end());
  });
}

inline RouterModel build_optimist(const Partitioning& p, const VectorSet& x, std::size_t t, double delta = kDefaultDelta,
                                  RouterKind kind = RouterKind::kOptimist) {
  if (kind != RouterKind::kOptimist && kind != RouterKind::kOptimistGaussian)
    throw InvalidArgument("build_optimist: kind must be an optimist variant");
  if (t > x.dim()) throw InvalidArgument("build_optimist: rank t exceeds d");
  RouterParams params{kind};
  params.rank = t;
  params.full_rank = t == x.dim();
  params.delta = delta;
  return detail::build_each_shard(params, p, x, [&](ShardState& st, const VectorSet& shard, std::size_t) {
    const ShardMoments m = compute_moments(shard);
    if (params.full_rank) {
      st.sketch = masked_sketch(m, 0);
      const auto& sigma = *m.sigma;
      st.covariance.resize(static_cast<std::size_t>(sigma.size()));
      for (Eigen::Index r = 0; r < sigma.rows(); ++r)
        for (Eigen::Index c = 0; c < sigma.cols(); ++c)
          st.covariance[static_cast<std::size_t>(r * sigma.cols() + c)] = static_cast<float>(sigma(r, c));
    } else {
      st.sketch = masked_sketch(m, t);
    }
  });
}

inline RouterModel build_optimist_gaussian(const Partitioning& p, const VectorSet& x, std::size_t t,
                                           double delta = kDefaultDelta) {
  return build_optimist(p, x, t, delta, RouterKind::kOptimistGaussian);
}

inline RouterModel build_router(const RouterParams& params, const Partitioning& p, const VectorSet& x) {
  validate(params);
  const std::size_t t = params.full_rank ? x.dim() : params.rank;
  switch (params.kind) {
    case RouterKind::kMean: return build_mean(p, x);
    case RouterKind::kNormalizedMean: return build_normalized_mean(p, x);
    case RouterKind::kScann: return build_scann(p, x, params.threshold);
    case RouterKind::kSubPartition: return build_subpartition(p, x, t, params.stat, params.seed);
    case RouterKind::kOptimist:
    case RouterKind::kOptimistGaussian: return build_optimist(p, x, t, params.delta, params.kind);
  }
  throw InvalidArgument("build_router: unknown kind");
}

// ---------------------------------------------------------------------------
// Scoring

/// Phi^-1((1 + delta) / 2) for the standard normal.
inline double gaussian_optimism_factor(double delta) {
  if (!(delta >= 0.0 && delta < 1.0)) throw InvalidArgument("delta must lie in [0, 1)");
  if (delta == 0.0) return 0.0;
  return boost::math::quantile(boost::math::normal_distribution<double>(0.0, 1.0), (1.0 + delta) / 2.0);
}

/// sqrt((1 + delta) / (1 - delta)), the one-sided Chebyshev multiplier on the standard deviation.
inline double chebyshev_optimism_factor(double delta) {
  if (!(delta >= 0.0 && delta < 1.0)) throw InvalidArgument("delta must lie in [0, 1)");
  return std::sqrt((1.0 + delta) / (1.0 - delta));
}

/// q^T Sigma q under the shard's stored covariance (full or sketched).
template <class T>
double shard_variance(const ShardState& st, std::span<const T> q) {
  if (st.covariance.empty()) return sketch_quadratic_form(st.sketch, q);
  const std::size_t d = q.size();
  double total = 0.0;
  for (std::size_t r = 0; r < d; ++r)
    total += static_cast<double>(q[r]) * inner_product(q, std::span<const float>(st.covariance.data() + r * d, d));
  return std::max(total, 0.0);
}

namespace detail {

inline ShardScores rank_scores(std::vector<double> scores) {
  ShardScores out;
  std::vector<std::pair<ShardId, double>> keyed(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) keyed[i] = {static_cast<ShardId>(i), scores[i]};
  std::sort(keyed.begin(), keyed.end(), ScoreIdGreater{});
  out.order.reserve(keyed.size());
  for (const auto& [id, s] : keyed) out.order.push_back(id);
  out.scores = std::move(scores);
  return out;
}

// `factor` is the optimism multiplier of the model's kind, hoisted out of the per-shard loop.
template <class T>
double shard_score(const RouterModel& model, const ShardState& st, std::span<const T> q, double factor) {
  if (st.flags & kShardEmpty) return -std::numeric_limits<double>::infinity();
  const std::size_t d = model.dim;
  switch (model.params.kind) {
    case RouterKind::kMean:
    case RouterKind::kNormalizedMean:
    case RouterKind::kScann: return inner_product(q, std::span<const float>(st.representatives));
    case RouterKind::kSubPartition: {
      const std::size_t r = st.representative_count(d);
      double best = -std::numeric_limits<double>::infinity(), sum = 0.0;
      for (std::size_t k = 0; k < r; ++k) {
        const double s = inner_product(q, std::span<const float>(st.representatives.data() + k * d, d));
        best = std::max(best, s);
        sum += s;
      }
      return model.params.stat == SubPartitionStat::kMax ? best : sum / static_cast<double>(r);
    }
    case RouterKind::kOptimist: {
      const double mean = inner_product(q, std::span<const float>(st.sketch.mu));
      return mean + std::sqrt(factor * shard_variance(st, q));
    }
    case RouterKind::kOptimistGaussian: {
      const double mean = inner_product(q, std::span<const float>(st.sketch.mu));
      return mean + std::sqrt(shard_variance(st, q)) * factor;
    }
  }
  return -std::numeric_limits<double>::infinity();
}

}  // namespace detail

template <class T>
ShardScores score(const RouterModel& model, std::span<const T> q) {
  if (q.size() != model.dim) throw InvalidArgument("score: query dimension mismatch");
  double factor = 0.0;
  if (model.params.kind == RouterKind::kOptimist)
    factor = (1.0 + model.params.delta) / (1.0 - model.params.delta);
  else if (model.params.kind == RouterKind::kOptimistGaussian)
    factor = gaussian_optimism_factor(model.params.delta);
  std::vector<double> scores(model.shard_count);
  for (std::size_t i = 0; i < model.shard_count; ++i)
    scores[i] = detail::shard_score(model, model.shards[i], q, factor);
  return detail::rank_scores(std::move(scores));
}

inline ShardScores score(const RouterModel& model, const std::vector<float>& q) {
  return score(model, std::span<const float>(q));
}

/// theta_i = <q, mu_i> + sqrt((1+delta)/(1-delta) * q^T Sigma_i q).
template <class T>
ShardScores score_optimist(const RouterModel& model, std::span<const T> q) {
  if (model.params.kind != RouterKind::kOptimist) throw InvalidArgument("score_optimist: model is not Optimist");
  return score(model, q);
}

/// theta_i = <q, mu_i> + sqrt(q^T Sigma_i q) * Phi^-1((1+delta)/2).
template <class T>
ShardScores score_optimist_gaussian(const RouterModel& model, std::span<const T> q) {
  if (model.params.kind != RouterKind::kOptimistGaussian)
    throw InvalidArgument("score_optimist_gaussian: model is not OptimistGaussian");
  return score(model, q);
}

inline std::vector<ShardId> route(const ShardScores& scores, std::size_t probes) {
  if (probes < 1 || probes > scores.order.size())
    throw InvalidArgument("route: probe count l=" + std::to_string(probes) + " outside [1, " +
                          std::to_string(scores.order.size()) + "]");
  return {scores.order.begin(), scores.order.begin() + static_cast<std::ptrdiff_t>(probes)};
}

template <class T>
std::vector<ShardId> route(const RouterModel& model, std::span<const T> q, std::size_t probes) {
  return route(score(model, q), probes);
}

inline std::vector<ShardId> route(const RouterModel& model, const std::vector<float>& q, std::size_t probes) {
  return route(score(model, std::span<const float>(q)), probes);
}

/// Scores every query; parallel over queries, results independent of worker count.
inline std::vector<ShardScores> score_batch(const RouterModel& model, const VectorSet& queries) {
  std::vector<ShardScores> out(queries.count());
  parallel_for(queries.count(), [&](std::size_t i) { out[i] = score(model, queries.row(i)); });
  return out;
}

}  // namespace optirouter
