#pragma once

// Exact ground truth, recall as a function of points probed, and the per-shard
// maximum-inner-product prediction error of a router.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <queue>
#include <string>
#include <vector>

#include "optirouter/core.hpp"
#include "optirouter/partitioner.hpp"
#include "optirouter/routers.hpp"

namespace optirouter {

struct GroundTruth {
  std::size_t k = 0;
  std::vector<TopKResult> per_query;

  std::size_t query_count() const noexcept { return per_query.size(); }
};

namespace detail {
inline std::vector<double> all_inner_products(const VectorSet& x, std::span<const float> q) {
  std::vector<double> out(x.count());
  for (std::size_t i = 0; i < x.count(); ++i) out[i] = inner_product(q, x.row(i));
  return out;
}
}  // namespace detail

/// Brute-force top-k by inner product; ties by ascending id.
inline GroundTruth ground_truth(const VectorSet& x, const VectorSet& queries, std::size_t k) {
  if (k < 1) throw InvalidArgument("ground_truth: k must be >= 1");
  if (k > x.count())
    throw InvalidArgument("ground_truth: k=" + std::to_string(k) + " exceeds dataset size " + std::to_string(x.count()));
  if (!queries.empty() && queries.dim() != x.dim()) throw InvalidArgument("ground_truth: query dimension mismatch");
  GroundTruth gt;
  gt.k = k;
  gt.per_query.resize(queries.count());
  parallel_for(queries.count(), [&](std::size_t qi) {
    const auto ips = detail::all_inner_products(x, queries.row(qi));
    std::vector<std::pair<PointId, double>> keyed(ips.size());
    for (std::size_t i = 0; i < ips.size(); ++i) keyed[i] = {static_cast<PointId>(i), ips[i]};
    gt.per_query[qi] = top_k(std::move(keyed), k);
  });
  return gt;
}

/// |retrieved ∩ truth| / k.
inline double recall(const std::vector<PointId>& retrieved, const std::vector<PointId>& truth, std::size_t k) {
  if (k == 0) throw InvalidArgument("recall: k must be >= 1");
  std::vector<PointId> a = retrieved, b = truth;
  std::sort(a.begin(), a.end());
  a.erase(std::unique(a.begin(), a.end()), a.end());
  std::sort(b.begin(), b.end());
  b.erase(std::unique(b.begin(), b.end()), b.end());
  std::vector<PointId> common;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(common));
  return static_cast<double>(common.size()) / static_cast<double>(k);
}

/// Recall and points probed for l = ls[0], ls[1], ... shards probed along the router's ranking.
struct RecallCurve {
  std::string router;
  std::size_t k = 0;
  std::vector<std::size_t> ls;
  std::vector<double> points_probed_mean;
  std::vector<double> recall_mean;
  std::vector<double> recall_std;
  std::vector<std::vector<double>> per_query_recall;       // [query][l index]
  std::vector<std::vector<std::uint64_t>> per_query_points;  // [query][l index]
};

/// Mean over queries of E_l(q) = (1/l) sum_{i<l} |tau_{pi_i} / max_{u in P_{pi_i}} <q,u> - 1|.
struct PredictionErrorTable {
  std::string router;
  std::vector<std::size_t> ls;
  std::vector<double> error_mean;
  /// Mean number of shards per query left out at each l (empty, or |true max| below kMaxFloor).
  std::vector<double> skipped_mean;
  std::vector<std::vector<double>> per_query_error;

  static constexpr double kMaxFloor = 1e-9;
};

/// {1, 2, 4, ..., } below C, plus C.
inline std::vector<std::size_t> geometric_grid(std::size_t shard_count) {
  std::vector<std::size_t> out;
  for (std::size_t l = 1; l < shard_count; l *= 2) out.push_back(l);
  out.push_back(shard_count);
  return out;
}

inline std::vector<std::size_t> full_grid(std::size_t shard_count) {
  std::vector<std::size_t> out(shard_count);
  for (std::size_t l = 0; l < shard_count; ++l) out[l] = l + 1;
  return out;
}

namespace detail {

inline void check_grid(const std::vector<std::size_t>& ls, std::size_t shard_count) {
  if (ls.empty()) throw InvalidArgument("l grid is empty");
  for (std::size_t i = 0; i < ls.size(); ++i) {
    if (ls[i] < 1 || ls[i] > shard_count)
      throw InvalidArgument("l grid value " + std::to_string(ls[i]) + " outside [1, " + std::to_string(shard_count) + "]");
    if (i && ls[i] <= ls[i - 1]) throw InvalidArgument("l grid must be strictly increasing");
  }
}

// Bounded top-k over a stream of (id, score) that tracks how many retained ids are in `truth`.
class TruthTrackingTopK {
 public:
  TruthTrackingTopK(std::size_t k, const std::vector<PointId>& truth) : k_(k), truth_(truth) {
    std::sort(truth_.begin(), truth_.end());
  }

  void offer(PointId id, double s) {
    const Entry e{id, s};
    if (heap_.size() < k_) {
      heap_.push(e);
      hits_ += is_truth(id);
      return;
    }
    if (!ScoreIdGreater{}(std::pair<PointId, double>{id, s}, std::pair<PointId, double>{heap_.top().id, heap_.top().score}))
      return;
    hits_ -= is_truth(heap_.top().id);
    heap_.pop();
    heap_.push(e);
    hits_ += is_truth(id);
  }

  std::size_t hits() const noexcept { return hits_; }

 private:
  struct Entry {
    PointId id;
    double score;
  };
  // Worst retained entry on top: lowest score, then highest id.
  struct WorstOnTop {
    bool operator()(const Entry& a, const Entry& b) const noexcept {
      return ScoreIdGreater{}(std::pair<PointId, double>{a.id, a.score}, std::pair<PointId, double>{b.id, b.score});
    }
  };
  bool is_truth(PointId id) const { return std::binary_search(truth_.begin(), truth_.end(), id); }

  std::size_t k_;
  std::vector<PointId> truth_;
  std::priority_queue<Entry, std::vector<Entry>, WorstOnTop> heap_;
  std::size_t hits_ = 0;
};

inline void check_inputs(const RouterModel& model, const Partitioning& p, const VectorSet& x, const VectorSet& queries) {
  if (queries.empty()) throw InvalidArgument("evaluation: empty query set");
  if (model.shard_count != p.shard_count()) throw InvalidArgument("evaluation: model and partitioning disagree on C");
  if (model.dim != x.dim() || queries.dim() != x.dim()) throw InvalidArgument("evaluation: dimension mismatch");
  if (p.point_count() != x.count()) throw InvalidArgument("evaluation: partitioning does not match dataset");
  for (ShardId i = 0; i < p.shard_count(); ++i)
    if (model.shards[i].size != p.shards[i].size())
      throw InvalidArgument("evaluation: model was built on a different partitioning");
}

}  // namespace detail

/// Recall curves for several routers and k values over the same partitioning; inner products of
/// each query with the dataset are computed once and shared. Result order: router-major, then k.
inline std::vector<RecallCurve> recall_curves(const std::vector<const RouterModel*>& models, const Partitioning& p,
                                              const VectorSet& x, const VectorSet& queries,
                                              const std::vector<const GroundTruth*>& truths,
                                              std::vector<std::size_t> ls = {}) {
  if (models.empty()) throw InvalidArgument("recall_curves: no routers");
  if (truths.empty()) throw InvalidArgument("recall_curves: no ground truth");
  for (const auto* m : models) detail::check_inputs(*m, p, x, queries);
  const std::size_t c = p.shard_count(), nq = queries.count();
  if (ls.empty()) ls = full_grid(c);
  detail::check_grid(ls, c);
  for (const auto* gt : truths)
    if (gt->query_count() != nq) throw InvalidArgument("recall_curves: ground truth query count mismatch");

  const std::size_t nm = models.size(), nk = truths.size();
  std::vector<RecallCurve> curves(nm * nk);
  for (std::size_t mi = 0; mi < nm; ++mi)
    for (std::size_t ki = 0; ki < nk; ++ki) {
      auto& cv = curves[mi * nk + ki];
      cv.router = models[mi]->name();
      cv.k = truths[ki]->k;
      cv.ls = ls;
      cv.per_query_recall.assign(nq, std::vector<double>(ls.size()));
      cv.per_query_points.assign(nq, std::vector<std::uint64_t>(ls.size()));
    }

  parallel_for(nq, [&](std::size_t qi) {
    auto q = queries.row(qi);
    const auto ips = detail::all_inner_products(x, q);
    for (std::size_t mi = 0; mi < nm; ++mi) {
      const ShardScores ranking = score(*models[mi], q);
      std::vector<detail::TruthTrackingTopK> heaps;
      heaps.reserve(nk);
      for (std::size_t ki = 0; ki < nk; ++ki) heaps.emplace_back(truths[ki]->k, truths[ki]->per_query[qi].ids);
      std::uint64_t probed = 0;
      std::size_t next = 0;
      for (std::size_t rank = 0; rank < c && next < ls.size(); ++rank) {
        for (PointId id : p.shards[ranking.order[rank]]) {
          for (auto& h : heaps) h.offer(id, ips[id]);
        }
        probed += p.shards[ranking.order[rank]].size();
        if (rank + 1 == ls[next]) {
          for (std::size_t ki = 0; ki < nk; ++ki) {
            auto& cv = curves[mi * nk + ki];
            cv.per_query_recall[qi][next] = static_cast<double>(heaps[ki].hits()) / static_cast<double>(truths[ki]->k);
            cv.per_query_points[qi][next] = probed;
          }
          ++next;
        }
      }
    }
  });

  for (auto& cv : curves) {
    const std::size_t nl = ls.size();
    cv.points_probed_mean.assign(nl, 0.0);
    cv.recall_mean.assign(nl, 0.0);
    cv.recall_std.assign(nl, 0.0);
    for (std::size_t li = 0; li < nl; ++li) {
      double sp = 0.0, sr = 0.0;
      for (std::size_t qi = 0; qi < nq; ++qi) {
        sp += static_cast<double>(cv.per_query_points[qi][li]);
        sr += cv.per_query_recall[qi][li];
      }
      const double mr = sr / static_cast<double>(nq);
      double var = 0.0;
      for (std::size_t qi = 0; qi < nq; ++qi) var += (cv.per_query_recall[qi][li] - mr) * (cv.per_query_recall[qi][li] - mr);
      cv.points_probed_mean[li] = sp / static_cast<double>(nq);
      cv.recall_mean[li] = mr;
      cv.recall_std[li] = std::sqrt(var / static_cast<double>(nq));
    }
  }
  return curves;
}

/// Route, exact-scan the union of routed shards, and report recall against ground truth per l.
inline RecallCurve recall_curve(const RouterModel& model, const Partitioning& p, const VectorSet& x,
                                const VectorSet& queries, const GroundTruth& truth, std::size_t k,
                                std::vector<std::size_t> ls = {}) {
  if (truth.k != k) throw InvalidArgument("recall_curve: ground truth was computed for a different k");
  return recall_curves({&model}, p, x, queries, {&truth}, std::move(ls)).front();
}

/// Exact max_{u in P_i} <q, u> per shard; -inf for empty shards.
inline std::vector<double> true_shard_maxima(const Partitioning& p, const std::vector<double>& ips) {
  std::vector<double> out(p.shard_count(), -std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < ips.size(); ++i) out[p.assignments[i]] = std::max(out[p.assignments[i]], ips[i]);
  return out;
}

/// E_l for one query given the router's scores and the exact per-shard maxima.
inline double prediction_error_for_query(const ShardScores& ranking, const std::vector<double>& maxima, std::size_t l,
                                         std::size_t* skipped = nullptr) {
  double sum = 0.0;
  std::size_t used = 0, skip = 0;
  for (std::size_t rank = 0; rank < l; ++rank) {
    const ShardId s = ranking.order[rank];
    const double mx = maxima[s];
    if (!std::isfinite(mx) || std::abs(mx) < PredictionErrorTable::kMaxFloor || !std::isfinite(ranking.scores[s])) {
      ++skip;
      continue;
    }
    sum += std::abs(ranking.scores[s] / mx - 1.0);
    ++used;
  }
  if (skipped) *skipped = skip;
  return used ? sum / static_cast<double>(used) : 0.0;
}

inline std::vector<PredictionErrorTable> prediction_errors(const std::vector<const RouterModel*>& models,
                                                           const Partitioning& p, const VectorSet& x,
                                                           const VectorSet& queries, std::vector<std::size_t> ls = {}) {
  if (models.empty()) throw InvalidArgument("prediction_errors: no routers");
  for (const auto* m : models) detail::check_inputs(*m, p, x, queries);
  const std::size_t c = p.shard_count(), nq = queries.count(), nm = models.size();
  if (ls.empty()) ls = geometric_grid(c);
  detail::check_grid(ls, c);

  std::vector<PredictionErrorTable> tables(nm);
  std::vector<std::vector<std::vector<std::size_t>>> skipped(nm, std::vector<std::vector<std::size_t>>(nq));
  for (std::size_t mi = 0; mi < nm; ++mi) {
    tables[mi].router = models[mi]->name();
    tables[mi].ls = ls;
    tables[mi].per_query_error.assign(nq, std::vector<double>(ls.size()));
  }
  parallel_for(nq, [&](std::size_t qi) {
    auto q = queries.row(qi);
    const auto maxima = true_shard_maxima(p, detail::all_inner_products(x, q));
    for (std::size_t mi = 0; mi < nm; ++mi) {
      const ShardScores ranking = score(*models[mi], q);
      skipped[mi][qi].resize(ls.size());
      for (std::size_t li = 0; li < ls.size(); ++li)
        tables[mi].per_query_error[qi][li] = prediction_error_for_query(ranking, maxima, ls[li], &skipped[mi][qi][li]);
    }
  });
  for (std::size_t mi = 0; mi < nm; ++mi) {
    auto& t = tables[mi];
    t.error_mean.assign(ls.size(), 0.0);
    t.skipped_mean.assign(ls.size(), 0.0);
    for (std::size_t li = 0; li < ls.size(); ++li) {
      for (std::size_t qi = 0; qi < nq; ++qi) {
        t.error_mean[li] += t.per_query_error[qi][li];
        t.skipped_mean[li] += static_cast<double>(skipped[mi][qi][li]);
      }
      t.error_mean[li] /= static_cast<double>(nq);
      t.skipped_mean[li] /= static_cast<double>(nq);
    }
  }
  return tables;
}

inline PredictionErrorTable prediction_error(const RouterModel& model, const Partitioning& p, const VectorSet& x,
                                             const VectorSet& queries, std::vector<std::size_t> ls = {}) {
  return prediction_errors({&model}, p, x, queries, std::move(ls)).front();
}

// ---------------------------------------------------------------------------
// Curve helpers used by reports and acceptance checks

/// Points probed needed to reach `target` recall, linearly interpolated between operating points.
/// Returns +inf when the curve never reaches the target.
inline double points_to_reach(const RecallCurve& cv, double target) {
  for (std::size_t i = 0; i < cv.ls.size(); ++i) {
    if (cv.recall_mean[i] >= target) {
      if (i == 0) return cv.points_probed_mean[0];
      const double r0 = cv.recall_mean[i - 1], r1 = cv.recall_mean[i];
      const double p0 = cv.points_probed_mean[i - 1], p1 = cv.points_probed_mean[i];
      if (r1 <= r0) return p1;
      return p0 + (target - r0) / (r1 - r0) * (p1 - p0);
    }
  }
  return std::numeric_limits<double>::infinity();
}

/// Recall at a points-probed budget, linearly interpolated between operating points.
inline double recall_at_budget(const RecallCurve& cv, double budget) {
  if (cv.ls.empty()) return 0.0;
  if (budget <= cv.points_probed_mean.front())
    return cv.recall_mean.front() * budget / std::max(cv.points_probed_mean.front(), 1.0);
  for (std::size_t i = 1; i < cv.ls.size(); ++i) {
    if (cv.points_probed_mean[i] >= budget) {
      const double p0 = cv.points_probed_mean[i - 1], p1 = cv.points_probed_mean[i];
      const double r0 = cv.recall_mean[i - 1], r1 = cv.recall_mean[i];
      if (p1 <= p0) return r1;
      return r0 + (budget - p0) / (p1 - p0) * (r1 - r0);
    }
  }
  return cv.recall_mean.back();
}

}  // namespace optirouter
