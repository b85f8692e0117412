#pragma once

// Dense vector types and the primitive operations every other module builds on.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

namespace optirouter {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Caller supplied an argument outside the documented domain.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Input data is malformed, inconsistent or non-finite.
class DataError : public Error {
 public:
  using Error::Error;
};

using PointId = std::uint32_t;
using ShardId = std::uint32_t;

/// Row-major collection of `count` vectors of dimension `dim`, float32 storage.
class VectorSet {
 public:
  VectorSet() = default;

  VectorSet(std::size_t count, std::size_t dim)
      : data_(count * dim, 0.0f), count_(count), dim_(dim) {
    if (dim == 0 && count != 0) throw InvalidArgument("VectorSet: dim must be >= 1");
  }

  VectorSet(std::vector<float> data, std::size_t count, std::size_t dim)
      : data_(std::move(data)), count_(count), dim_(dim) {
    if (dim == 0 && count != 0) throw InvalidArgument("VectorSet: dim must be >= 1");
    if (data_.size() != count * dim)
      throw InvalidArgument("VectorSet: data length " + std::to_string(data_.size()) +
                            " != count*dim " + std::to_string(count * dim));
  }

  std::size_t count() const noexcept { return count_; }
  std::size_t dim() const noexcept { return dim_; }
  bool empty() const noexcept { return count_ == 0; }

  std::span<const float> row(std::size_t i) const noexcept {
    return {data_.data() + i * dim_, dim_};
  }
  std::span<float> mutable_row(std::size_t i) noexcept { return {data_.data() + i * dim_, dim_}; }

  std::span<const float> data() const noexcept { return data_; }

  /// Index of the first non-finite value, or `npos` when all values are finite.
  std::size_t first_non_finite() const noexcept {
    for (std::size_t i = 0; i < data_.size(); ++i)
      if (!std::isfinite(data_[i])) return i;
    return npos;
  }

  void validate_finite() const {
    if (auto at = first_non_finite(); at != npos)
      throw DataError("VectorSet: non-finite value at row " + std::to_string(at / dim_) +
                      ", column " + std::to_string(at % dim_));
  }

  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

 private:
  std::vector<float> data_;
  std::size_t count_ = 0;
  std::size_t dim_ = 0;
};

/// Selected ids with their scores, scores non-increasing, ties by ascending id.
struct TopKResult {
  std::vector<PointId> ids;
  std::vector<double> scores;
};

/// Inner product with float64 accumulation.
template <class A, class B>
double inner_product(std::span<const A> a, std::span<const B> b) {
  if (a.size() != b.size())
    throw InvalidArgument("inner_product: dimension mismatch " + std::to_string(a.size()) +
                          " vs " + std::to_string(b.size()));
  // Four fixed lanes: keeps the summation order (and so the result) independent of the build.
  double acc[4] = {0.0, 0.0, 0.0, 0.0};
  const std::size_t n = a.size(), body = n - n % 4;
  for (std::size_t j = 0; j < body; j += 4) {
    acc[0] += static_cast<double>(a[j]) * static_cast<double>(b[j]);
    acc[1] += static_cast<double>(a[j + 1]) * static_cast<double>(b[j + 1]);
    acc[2] += static_cast<double>(a[j + 2]) * static_cast<double>(b[j + 2]);
    acc[3] += static_cast<double>(a[j + 3]) * static_cast<double>(b[j + 3]);
  }
  for (std::size_t j = body; j < n; ++j) acc[0] += static_cast<double>(a[j]) * static_cast<double>(b[j]);
  return (acc[0] + acc[1]) + (acc[2] + acc[3]);
}

inline double inner_product(const std::vector<float>& a, const std::vector<float>& b) {
  return inner_product(std::span<const float>(a), std::span<const float>(b));
}

template <class T>
double squared_norm(std::span<const T> v) {
  double acc = 0.0;
  for (T x : v) acc += static_cast<double>(x) * static_cast<double>(x);
  return acc;
}

/// Returns v / ||v||_2. Throws on a zero (or non-finite) norm; the caller picks the fallback.
template <class T>
std::vector<T> l2_normalize(std::span<const T> v) {
  const double norm = std::sqrt(squared_norm(v));
  if (!(norm > 0.0) || !std::isfinite(norm)) throw InvalidArgument("l2_normalize: zero-norm vector");
  std::vector<T> out(v.size());
  for (std::size_t j = 0; j < v.size(); ++j) out[j] = static_cast<T>(static_cast<double>(v[j]) / norm);
  return out;
}

inline std::vector<float> l2_normalize(const std::vector<float>& v) {
  return l2_normalize(std::span<const float>(v));
}

/// Total order used everywhere a ranking is produced: score descending, id ascending.
struct ScoreIdGreater {
  template <class Id>
  bool operator()(const std::pair<Id, double>& a, const std::pair<Id, double>& b) const noexcept {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  }
};

inline TopKResult top_k(std::vector<std::pair<PointId, double>> scores, std::size_t k) {
  if (k == 0) throw InvalidArgument("top_k: k must be >= 1");
  const std::size_t keep = std::min(k, scores.size());
  std::partial_sort(scores.begin(), scores.begin() + static_cast<std::ptrdiff_t>(keep), scores.end(),
                    ScoreIdGreater{});
  TopKResult out;
  out.ids.reserve(keep);
  out.scores.reserve(keep);
  for (std::size_t i = 0; i < keep; ++i) {
    out.ids.push_back(scores[i].first);
    out.scores.push_back(scores[i].second);
  }
  return out;
}

/// Copy of `queries` with each row L2-normalized. Zero rows are left untouched.
inline VectorSet normalize_rows(const VectorSet& queries) {
  VectorSet out = queries;
  for (std::size_t i = 0; i < out.count(); ++i) {
    auto row = out.mutable_row(i);
    const double norm = std::sqrt(squared_norm(std::span<const float>(row)));
    if (norm > 0.0)
      for (float& x : row) x = static_cast<float>(x / norm);
  }
  return out;
}

/// 64-bit FNV-1a, used for dataset and artifact checksums.
inline std::uint64_t fnv1a64(const void* data, std::size_t size, std::uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// ---------------------------------------------------------------------------
// Parallelism

namespace detail {
inline std::atomic<std::size_t>& worker_count_storage() {
  static std::atomic<std::size_t> workers{0};
  return workers;
}
}  // namespace detail

/// Caps the number of worker threads; 0 means the number of available cores.
inline void set_worker_count(std::size_t workers) { detail::worker_count_storage() = workers; }

inline std::size_t worker_count() {
  std::size_t w = detail::worker_count_storage();
  if (w == 0) w = std::max<unsigned>(1u, std::thread::hardware_concurrency());
  return w;
}

/// Runs fn(i) for i in [0, n) over contiguous chunks. fn must only write to slot i.
template <class Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  const std::size_t workers = std::min(worker_count(), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  const std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        const std::size_t lo = w * chunk, hi = std::min(n, lo + chunk);
        for (std::size_t i = lo; i < hi; ++i) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace optirouter
