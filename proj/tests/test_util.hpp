#pragma once

#include <Eigen/Dense>

#include <initializer_list>
#include <random>
#include <vector>

#include "optirouter/core.hpp"
#include "optirouter/partitioner.hpp"
#include "oracles.hpp"

namespace testutil {

inline optirouter::VectorSet rows(std::initializer_list<std::initializer_list<float>> r) {
  const std::size_t d = r.begin()->size();
  std::vector<float> data;
  for (const auto& row : r) data.insert(data.end(), row.begin(), row.end());
  return optirouter::VectorSet(std::move(data), r.size(), d);
}

inline optirouter::VectorSet random_set(std::size_t n, std::size_t d, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> nd(0.0f, static_cast<float>(scale));
  optirouter::VectorSet x(n, d);
  for (std::size_t i = 0; i < n; ++i)
    for (auto& v : x.mutable_row(i)) v = nd(rng);
  return x;
}

inline std::vector<float> unit_query(std::size_t d, std::mt19937_64& rng) {
  std::normal_distribution<double> nd;
  std::vector<double> v(d);
  double n = 0.0;
  for (auto& x : v) {
    x = nd(rng);
    n += x * x;
  }
  std::vector<float> out(d);
  for (std::size_t j = 0; j < d; ++j) out[j] = static_cast<float>(v[j] / std::sqrt(n));
  return out;
}

inline std::vector<std::vector<double>> to_nested(const optirouter::VectorSet& x) {
  std::vector<std::vector<double>> out;
  for (std::size_t i = 0; i < x.count(); ++i) out.emplace_back(x.row(i).begin(), x.row(i).end());
  return out;
}

inline oracle::Matrix to_nested(const Eigen::MatrixXd& m) {
  oracle::Matrix out(static_cast<std::size_t>(m.rows()), std::vector<double>(static_cast<std::size_t>(m.cols())));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) out[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = m(i, j);
  return out;
}

inline Eigen::MatrixXd from_nested(const oracle::Matrix& m) {
  Eigen::MatrixXd out(m.size(), m.size());
  for (std::size_t i = 0; i < m.size(); ++i)
    for (std::size_t j = 0; j < m.size(); ++j) out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = m[i][j];
  return out;
}

/// Partitioning from explicit assignments with centroids set to shard means.
inline optirouter::Partitioning manual_partitioning(const optirouter::VectorSet& x, std::vector<optirouter::ShardId> a,
                                                    std::size_t c) {
  optirouter::VectorSet cents(c, x.dim());
  std::vector<double> counts(c, 0.0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    counts[a[i]] += 1.0;
    for (std::size_t j = 0; j < x.dim(); ++j) cents.mutable_row(a[i])[j] += x.row(i)[j];
  }
  for (std::size_t k = 0; k < c; ++k)
    for (auto& v : cents.mutable_row(k)) v = counts[k] > 0 ? static_cast<float>(v / counts[k]) : 0.0f;
  return optirouter::make_partitioning(std::move(a), std::move(cents), optirouter::ClusteringMode::kStandard);
}

}  // namespace testutil
