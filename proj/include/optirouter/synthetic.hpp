#pragma once

// Seeded synthetic vector collections with varying norms, for desk-scale experiments.
// Only the 64-bit Mersenne twister's raw output is used, so the bytes produced for a given
// seed do not depend on the standard library's distribution implementations.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

#include "optirouter/core.hpp"

namespace optirouter {

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * std::numbers::pi * u2);
    has_spare_ = true;
    return r * std::cos(2.0 * std::numbers::pi * u2);
  }

  std::size_t index(std::size_t n) { return static_cast<std::size_t>(uniform() * static_cast<double>(n)); }

  std::vector<double> unit_vector(std::size_t d) {
    std::vector<double> v(d);
    double n = 0.0;
    do {
      n = 0.0;
      for (auto& x : v) {
        x = normal();
        n += x * x;
      }
    } while (!(n > 0.0));
    n = std::sqrt(n);
    for (auto& x : v) x /= n;
    return v;
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// Mixture of topics on the sphere with per-topic spread and log-normal norms.
struct MixtureSpec {
  std::size_t count = 100000;
  std::size_t dim = 64;
  std::size_t topics = 100;
  double spread_min = 0.6;        // per-topic angular noise scale, uniform in [min, max]
  double spread_max = 1.6;
  double topic_norm_sigma = 0.35;  // log-normal sigma of the per-topic norm scale
  double point_norm_sigma = 0.35;  // log-normal sigma of the per-point norm
  double common_direction = 0.5;  // weight of a direction shared by all topics
};

struct MixtureModel {
  std::vector<std::vector<double>> centers;
  std::vector<double> spreads;
  std::vector<double> norm_scales;
  std::vector<double> weights;
};

inline MixtureModel make_mixture(const MixtureSpec& spec, Rng& rng) {
  MixtureModel m;
  const auto common = rng.unit_vector(spec.dim);
  double total = 0.0;
  for (std::size_t k = 0; k < spec.topics; ++k) {
    auto c = rng.unit_vector(spec.dim);
    double n = 0.0;
    for (std::size_t j = 0; j < spec.dim; ++j) {
      c[j] += spec.common_direction * common[j];
      n += c[j] * c[j];
    }
    for (auto& v : c) v /= std::sqrt(n);
    m.centers.push_back(std::move(c));
    m.spreads.push_back(spec.spread_min + (spec.spread_max - spec.spread_min) * rng.uniform());
    m.norm_scales.push_back(std::exp(spec.topic_norm_sigma * rng.normal()));
    const double w = 0.5 + rng.uniform();
    m.weights.push_back(w);
    total += w;
  }
  for (auto& w : m.weights) w /= total;
  return m;
}

/// Draws `count` points; `unit_norm` drops the norm model (used for queries).
inline VectorSet sample_mixture(const MixtureModel& m, const MixtureSpec& spec, std::size_t count, bool unit_norm,
                                Rng& rng) {
  VectorSet out(count, spec.dim);
  const double noise = 1.0 / std::sqrt(static_cast<double>(spec.dim));
  for (std::size_t i = 0; i < count; ++i) {
    double u = rng.uniform(), run = 0.0;
    std::size_t k = 0;
    for (; k + 1 < m.weights.size(); ++k) {
      run += m.weights[k];
      if (u < run) break;
    }
    std::vector<double> v(spec.dim);
    double n = 0.0;
    for (std::size_t j = 0; j < spec.dim; ++j) {
      v[j] = m.centers[k][j] + m.spreads[k] * noise * rng.normal();
      n += v[j] * v[j];
    }
    n = std::sqrt(n);
    const double scale = unit_norm ? 1.0 : m.norm_scales[k] * std::exp(spec.point_norm_sigma * rng.normal());
    auto row = out.mutable_row(i);
    for (std::size_t j = 0; j < spec.dim; ++j) row[j] = static_cast<float>(v[j] / n * scale);
  }
  return out;
}

struct SyntheticDataset {
  VectorSet points;
  VectorSet queries;
};

inline SyntheticDataset make_synthetic_dataset(const MixtureSpec& spec, std::size_t query_count, std::uint64_t seed) {
  Rng rng(seed);
  const MixtureModel model = make_mixture(spec, rng);
  SyntheticDataset ds;
  ds.points = sample_mixture(model, spec, spec.count, false, rng);
  ds.queries = sample_mixture(model, spec, query_count, true, rng);
  return ds;
}

}  // namespace optirouter
