#pragma once

// Per-shard first and second moments, the diagonal-preserving masked sketch of the covariance,
// the Eckart-Young-Mirsky low-rank baseline and the spectral approximation error between them.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "optirouter/core.hpp"

namespace optirouter {

/// Population mean and covariance of one shard.
struct ShardMoments {
  Eigen::VectorXd mu;
  std::optional<Eigen::MatrixXd> sigma;
  std::size_t n = 0;

  std::size_t dim() const noexcept { return static_cast<std::size_t>(mu.size()); }
};

/// Eigenpairs with values sorted non-increasing; column i of `vectors` pairs with values[i].
struct SymmetricEigen {
  Eigen::VectorXd values;
  Eigen::MatrixXd vectors;
};

/// Rank-t masked sketch: Sigma ~ D + D^1/2 Q_t Lambda_t Q_t^T D^1/2.
///
/// State is mu, the clamped diagonal D, t eigenvalues and t eigenvectors of the
/// normalized residual D^-1/2 (Sigma - D) D^-1/2, i.e. t + 2 vectors of length d.
/// Stored as float32 so the persisted form is lossless.
struct MaskedSketch {
  std::vector<float> mu;
  std::vector<float> diag;
  std::vector<float> eigvals;  // t, non-increasing
  std::vector<float> eigvecs;  // t columns of length d, column l at [l*d, (l+1)*d)
  std::size_t rank = 0;
  std::size_t n = 0;

  std::size_t dim() const noexcept { return mu.size(); }
  std::span<const float> eigvec(std::size_t l) const noexcept {
    return {eigvecs.data() + l * mu.size(), mu.size()};
  }
};

/// Relative floor applied to the covariance diagonal before D^-1/2.
inline constexpr double kDiagonalFloor = 1e-9;

inline ShardMoments compute_moments(const VectorSet& shard, bool with_covariance = true) {
  const std::size_t n = shard.count(), d = shard.dim();
  if (n == 0) throw InvalidArgument("compute_moments: empty shard");
  ShardMoments out;
  out.n = n;
  out.mu = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < n; ++i) {
    auto r = shard.row(i);
    for (std::size_t j = 0; j < d; ++j) out.mu[static_cast<Eigen::Index>(j)] += r[j];
  }
  out.mu /= static_cast<double>(n);
  if (!with_covariance) return out;

  Eigen::MatrixXd centered(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < n; ++i) {
    auto r = shard.row(i);
    for (std::size_t j = 0; j < d; ++j)
      centered(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          static_cast<double>(r[j]) - out.mu[static_cast<Eigen::Index>(j)];
  }
  Eigen::MatrixXd sigma = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
  sigma.selfadjointView<Eigen::Lower>().rankUpdate(centered.transpose(), 1.0 / static_cast<double>(n));
  sigma = sigma.selfadjointView<Eigen::Lower>();
  out.sigma = std::move(sigma);
  return out;
}

inline bool all_finite(const Eigen::MatrixXd& m) { return m.allFinite(); }

inline void require_symmetric(const Eigen::MatrixXd& m, const char* what, double tol = 1e-6) {
  if (m.rows() != m.cols()) throw InvalidArgument(std::string(what) + ": matrix is not square");
  const double scale = 1.0 + m.cwiseAbs().maxCoeff();
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > tol * scale)
    throw InvalidArgument(std::string(what) + ": matrix is not symmetric");
}

/// Dense symmetric eigendecomposition, eigenvalues non-increasing.
inline SymmetricEigen symmetric_eigen(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(m);
  if (solver.info() != Eigen::Success) throw DataError("symmetric_eigen: decomposition failed");
  SymmetricEigen out;
  out.values = solver.eigenvalues().reverse();
  out.vectors = solver.eigenvectors().rowwise().reverse();
  return out;
}

/// Diagonal of sigma clamped to at least kDiagonalFloor * max diagonal.
inline Eigen::VectorXd clamped_diagonal(const Eigen::MatrixXd& sigma) {
  Eigen::VectorXd diag = sigma.diagonal();
  const double top = diag.size() ? diag.maxCoeff() : 0.0;
  const double floor = kDiagonalFloor * std::max(top, 0.0);
  for (Eigen::Index j = 0; j < diag.size(); ++j) diag[j] = std::max(diag[j], floor);
  return diag;
}

inline MaskedSketch masked_sketch(const ShardMoments& m, std::size_t t) {
  if (!m.sigma) throw InvalidArgument("masked_sketch: moments carry no covariance");
  const Eigen::MatrixXd& sigma = *m.sigma;
  const std::size_t d = m.dim();
  if (t > d) throw InvalidArgument("masked_sketch: rank t=" + std::to_string(t) + " exceeds d=" + std::to_string(d));
  if (!sigma.allFinite() || !m.mu.allFinite()) throw DataError("masked_sketch: non-finite covariance");

  MaskedSketch s;
  s.rank = t;
  s.n = m.n;
  s.mu.assign(m.mu.data(), m.mu.data() + d);
  const Eigen::VectorXd diag = clamped_diagonal(sigma);
  s.diag.assign(diag.data(), diag.data() + d);
  s.eigvals.assign(t, 0.0f);
  s.eigvecs.assign(t * d, 0.0f);
  if (t == 0 || !(diag.maxCoeff() > 0.0)) return s;  // zero covariance: no residual to keep

  const Eigen::VectorXd inv_sqrt = diag.cwiseSqrt().cwiseInverse();
  Eigen::MatrixXd residual = inv_sqrt.asDiagonal() * sigma * inv_sqrt.asDiagonal();
  residual.diagonal().setZero();
  residual = 0.5 * (residual + residual.transpose());
  const SymmetricEigen eig = symmetric_eigen(residual);
  for (std::size_t l = 0; l < t; ++l) {
    s.eigvals[l] = static_cast<float>(eig.values[static_cast<Eigen::Index>(l)]);
    for (std::size_t j = 0; j < d; ++j)
      s.eigvecs[l * d + j] =
          static_cast<float>(eig.vectors(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(l)));
  }
  return s;
}

/// q^T Sigma_t q under the sketch: ||q~||^2 + q~^T Q_t Lambda_t Q_t^T q~ with q~ = q o sqrt(D), clamped at 0.
template <class T>
double sketch_quadratic_form(const MaskedSketch& s, std::span<const T> q) {
  const std::size_t d = s.dim();
  if (q.size() != d) throw InvalidArgument("sketch_quadratic_form: dimension mismatch");
  std::vector<double> scaled(d);
  double total = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    scaled[j] = static_cast<double>(q[j]) * std::sqrt(static_cast<double>(s.diag[j]));
    total += scaled[j] * scaled[j];
  }
  for (std::size_t l = 0; l < s.rank; ++l) {
    const double proj = inner_product(std::span<const double>(scaled), s.eigvec(l));
    total += static_cast<double>(s.eigvals[l]) * proj * proj;
  }
  return std::max(total, 0.0);
}

inline double sketch_quadratic_form(const MaskedSketch& s, const std::vector<float>& q) {
  return sketch_quadratic_form(s, std::span<const float>(q));
}

/// Dense D + D^1/2 Q_t Lambda_t Q_t^T D^1/2.
inline Eigen::MatrixXd sketch_matrix(const MaskedSketch& s) {
  const auto d = static_cast<Eigen::Index>(s.dim());
  Eigen::VectorXd sqrt_diag(d);
  for (Eigen::Index j = 0; j < d; ++j) sqrt_diag[j] = std::sqrt(static_cast<double>(s.diag[static_cast<std::size_t>(j)]));
  Eigen::MatrixXd inner = Eigen::MatrixXd::Identity(d, d);
  for (std::size_t l = 0; l < s.rank; ++l) {
    Eigen::VectorXd v(d);
    for (Eigen::Index j = 0; j < d; ++j) v[j] = s.eigvec(l)[static_cast<std::size_t>(j)];
    inner += static_cast<double>(s.eigvals[l]) * v * v.transpose();
  }
  return sqrt_diag.asDiagonal() * inner * sqrt_diag.asDiagonal();
}

/// Best rank-t approximation [V sqrt(L)]_t [V sqrt(L)]_t^T from the top eigenpairs of Sigma.
inline Eigen::MatrixXd low_rank_sketch(const ShardMoments& m, std::size_t t) {
  if (!m.sigma) throw InvalidArgument("low_rank_sketch: moments carry no covariance");
  const std::size_t d = m.dim();
  if (t > d) throw InvalidArgument("low_rank_sketch: rank t=" + std::to_string(t) + " exceeds d=" + std::to_string(d));
  const SymmetricEigen eig = symmetric_eigen(*m.sigma);
  const auto ti = static_cast<Eigen::Index>(t);
  Eigen::MatrixXd factor = eig.vectors.leftCols(ti);
  for (Eigen::Index l = 0; l < ti; ++l) factor.col(l) *= std::sqrt(std::max(eig.values[l], 0.0));
  return factor * factor.transpose();
}

/// Spectral norm of sigma - approx: max |eigenvalue| of the symmetric difference.
inline double approximation_error(const Eigen::MatrixXd& sigma, const Eigen::MatrixXd& approx) {
  if (sigma.rows() != approx.rows() || sigma.cols() != approx.cols())
    throw InvalidArgument("approximation_error: dimension mismatch");
  require_symmetric(sigma, "approximation_error");
  require_symmetric(approx, "approximation_error");
  Eigen::MatrixXd diff = sigma - approx;
  diff = 0.5 * (diff + diff.transpose());
  if (diff.size() == 0) return 0.0;
  const SymmetricEigen eig = symmetric_eigen(diff);
  return eig.values.cwiseAbs().maxCoeff();
}

struct AssumptionDiagnostics {
  /// (t+1)-th largest eigenvalue of D^-1/2 Sigma D^-1/2; NaN when t >= d.
  double lambda_t_plus_1 = std::numeric_limits<double>::quiet_NaN();
  /// min(D) / max(D) of the raw diagonal; NaN when the diagonal is all zero.
  double diag_ratio = std::numeric_limits<double>::quiet_NaN();
};

inline AssumptionDiagnostics assumption_diagnostics(const ShardMoments& m, std::size_t t) {
  if (!m.sigma) throw InvalidArgument("assumption_diagnostics: moments carry no covariance");
  const Eigen::MatrixXd& sigma = *m.sigma;
  AssumptionDiagnostics out;
  const Eigen::VectorXd raw = sigma.diagonal();
  if (raw.size() == 0 || !(raw.maxCoeff() > 0.0)) return out;
  out.diag_ratio = raw.minCoeff() / raw.maxCoeff();
  if (t >= m.dim()) return out;
  const Eigen::VectorXd inv_sqrt = clamped_diagonal(sigma).cwiseSqrt().cwiseInverse();
  Eigen::MatrixXd sym = inv_sqrt.asDiagonal() * sigma * inv_sqrt.asDiagonal();
  sym = 0.5 * (sym + sym.transpose());
  out.lambda_t_plus_1 = symmetric_eigen(sym).values[static_cast<Eigen::Index>(t)];
  return out;
}

}  // namespace optirouter
