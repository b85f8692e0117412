#pragma once

// Dataset ingestion (fvecs, raw float32 + JSON manifest) and little-endian persistence of
// partitionings, router models and cached ground truth.

#include <nlohmann/json.hpp>

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "optirouter/core.hpp"
#include "optirouter/eval.hpp"
#include "optirouter/partitioner.hpp"
#include "optirouter/report.hpp"
#include "optirouter/routers.hpp"

namespace optirouter {

/// Malformed or incompatible file.
class FormatError : public DataError {
 public:
  using DataError::DataError;
};

// ---------------------------------------------------------------------------
// Little-endian byte streams

class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void bytes(const char* p, std::size_t n) { buf_.append(p, n); }
  void f32s(std::span<const float> v) {
    for (float x : v) f32(x);
  }

  const std::string& buffer() const noexcept { return buf_; }

 private:
  std::string buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string data, std::string origin = "<memory>")
      : data_(std::move(data)), origin_(std::move(origin)) {}

  static ByteReader from_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open '" + path + "'");
    std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return ByteReader(std::move(data), path);
  }

  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(data_[pos_++]);
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_++])) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_++])) << (8 * i);
    return v;
  }
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::vector<float> f32s(std::size_t n) {
    need(n * 4);
    std::vector<float> v(n);
    for (auto& x : v) x = f32();
    return v;
  }
  void expect_magic(const char (&magic)[5]) {
    need(4);
    if (std::memcmp(data_.data() + pos_, magic, 4) != 0)
      throw FormatError(origin_ + ": bad magic, expected '" + std::string(magic) + "'");
    pos_ += 4;
  }

  std::size_t offset() const noexcept { return pos_; }
  std::size_t remaining() const noexcept { return data_.size() - pos_; }
  std::size_t size() const noexcept { return data_.size(); }
  const std::string& origin() const noexcept { return origin_; }
  const std::string& data() const noexcept { return data_; }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n)
      throw FormatError(origin_ + ": truncated at byte offset " + std::to_string(pos_) + " (need " +
                        std::to_string(n) + " more bytes)");
  }

  std::string data_;
  std::string origin_;
  std::size_t pos_ = 0;
};

// ---------------------------------------------------------------------------
// Datasets

/// Parses fvecs: per record an int32 dimension followed by that many float32 values.
inline VectorSet parse_fvecs(const std::string& bytes, const std::string& origin = "<memory>") {
  if (bytes.empty()) {
    std::cerr << "warning: " << origin << " is empty, returning an empty vector set\n";
    return VectorSet();
  }
  ByteReader r(bytes, origin);
  std::vector<float> data;
  std::size_t dim = 0, count = 0;
  while (r.remaining() > 0) {
    const std::size_t at = r.offset();
    if (r.remaining() < 4) throw FormatError(origin + ": truncated record header at byte offset " + std::to_string(at));
    const std::int32_t d = r.i32();
    if (d <= 0) throw FormatError(origin + ": invalid dimension " + std::to_string(d) + " at byte offset " + std::to_string(at));
    if (count == 0) dim = static_cast<std::size_t>(d);
    if (static_cast<std::size_t>(d) != dim)
      throw FormatError(origin + ": record " + std::to_string(count) + " at byte offset " + std::to_string(at) +
                        " has dimension " + std::to_string(d) + ", expected " + std::to_string(dim));
    if (r.remaining() < dim * 4)
      throw FormatError(origin + ": truncated record " + std::to_string(count) + " at byte offset " + std::to_string(at));
    for (std::size_t j = 0; j < dim; ++j) {
      const std::size_t value_at = r.offset();
      const float v = r.f32();
      if (!std::isfinite(v))
        throw FormatError(origin + ": non-finite value at byte offset " + std::to_string(value_at));
      data.push_back(v);
    }
    ++count;
  }
  return VectorSet(std::move(data), count, dim);
}

inline VectorSet read_fvecs(const std::string& path) {
  auto r = ByteReader::from_file(path);
  return parse_fvecs(r.data(), path);
}

inline std::string serialize_fvecs(const VectorSet& x) {
  ByteWriter w;
  for (std::size_t i = 0; i < x.count(); ++i) {
    w.i32(static_cast<std::int32_t>(x.dim()));
    w.f32s(x.row(i));
  }
  return w.buffer();
}

inline void write_fvecs(const std::string& path, const VectorSet& x) { write_text_file(path, serialize_fvecs(x)); }

inline VectorSet read_raw_f32(const std::string& path, std::size_t count, std::size_t dim) {
  auto r = ByteReader::from_file(path);
  if (r.size() != count * dim * 4)
    throw FormatError(path + ": size " + std::to_string(r.size()) + " bytes does not match count*dim*4 = " +
                      std::to_string(count * dim * 4));
  VectorSet x(r.f32s(count * dim), count, dim);
  if (auto at = x.first_non_finite(); at != VectorSet::npos)
    throw FormatError(path + ": non-finite value at byte offset " + std::to_string(at * 4));
  return x;
}

inline std::uint64_t checksum(const VectorSet& x) {
  ByteWriter w;
  w.u64(x.count());
  w.u64(x.dim());
  w.f32s(x.data());
  return fnv1a64(w.buffer().data(), w.buffer().size());
}

enum class DatasetFormat { kFvecs, kRawF32 };

struct DatasetManifest {
  std::string path;  // relative paths resolve against the manifest's directory
  DatasetFormat format = DatasetFormat::kFvecs;
  std::size_t count = 0;
  std::size_t dim = 0;
  bool normalize = false;
  std::string checksum;  // hex FNV-1a of the loaded data; empty = unchecked
};

inline nlohmann::json to_json(const DatasetManifest& m) {
  return {{"path", m.path},
          {"format", m.format == DatasetFormat::kFvecs ? "fvecs" : "raw-f32"},
          {"count", m.count},
          {"dim", m.dim},
          {"normalize", m.normalize},
          {"checksum", m.checksum}};
}

inline DatasetManifest read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path + ": invalid JSON: " + e.what());
  }
  DatasetManifest m;
  try {
    m.path = j.at("path").get<std::string>();
    const std::string fmt = j.value("format", "fvecs");
    if (fmt == "fvecs") m.format = DatasetFormat::kFvecs;
    else if (fmt == "raw-f32") m.format = DatasetFormat::kRawF32;
    else throw FormatError(path + ": unknown dataset format '" + fmt + "'");
    m.count = j.value("count", std::size_t{0});
    m.dim = j.value("dim", std::size_t{0});
    m.normalize = j.value("normalize", false);
    m.checksum = j.value("checksum", std::string());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path + ": " + e.what());
  }
  if (!std::filesystem::path(m.path).is_absolute())
    m.path = (std::filesystem::path(path).parent_path() / m.path).string();
  return m;
}

inline void write_manifest(const std::string& path, const DatasetManifest& m) {
  write_text_file(path, to_json(m).dump(2) + "\n");
}

/// Loads the vectors a manifest describes and checks declared shape and checksum.
inline VectorSet load_dataset(const DatasetManifest& m) {
  VectorSet x = m.format == DatasetFormat::kFvecs ? read_fvecs(m.path) : read_raw_f32(m.path, m.count, m.dim);
  if (m.format == DatasetFormat::kFvecs) {
    if (m.count && m.count != x.count())
      throw FormatError(m.path + ": manifest declares " + std::to_string(m.count) + " vectors, file has " +
                        std::to_string(x.count()));
    if (m.dim && m.dim != x.dim())
      throw FormatError(m.path + ": manifest declares dim " + std::to_string(m.dim) + ", file has " + std::to_string(x.dim()));
  }
  if (!m.checksum.empty() && hex64(checksum(x)) != m.checksum)
    throw FormatError(m.path + ": checksum mismatch (manifest " + m.checksum + ", data " + hex64(checksum(x)) + ")");
  return x;
}

/// Accepts a manifest (.json) or a bare .fvecs path.
inline VectorSet load_dataset(const std::string& path, DatasetManifest* manifest_out = nullptr) {
  DatasetManifest m;
  if (std::filesystem::path(path).extension() == ".json") {
    m = read_manifest(path);
  } else {
    m.path = path;
    m.format = DatasetFormat::kFvecs;
  }
  VectorSet x = load_dataset(m);
  if (manifest_out) *manifest_out = m;
  return x;
}

// ---------------------------------------------------------------------------
// Partitioning file: "OPTP", version, m, d, C, mode, assignments u32[m], centroids f32[C*d]

inline constexpr std::uint32_t kPartitioningVersion = 1;

inline std::uint64_t checksum(const Partitioning& p) {
  ByteWriter w;
  for (ShardId a : p.assignments) w.u32(a);
  w.u64(p.shard_count());
  return fnv1a64(w.buffer().data(), w.buffer().size());
}

inline std::string serialize(const Partitioning& p) {
  ByteWriter w;
  w.bytes("OPTP", 4);
  w.u32(kPartitioningVersion);
  w.u64(p.point_count());
  w.u64(p.dim());
  w.u64(p.shard_count());
  w.u8(static_cast<std::uint8_t>(p.mode));
  for (ShardId a : p.assignments) w.u32(a);
  w.f32s(p.centroids.data());
  return w.buffer();
}

inline Partitioning deserialize_partitioning(ByteReader r) {
  r.expect_magic("OPTP");
  const std::uint32_t version = r.u32();
  if (version != kPartitioningVersion)
    throw FormatError(r.origin() + ": unsupported partitioning version " + std::to_string(version));
  const std::uint64_t m = r.u64(), d = r.u64(), c = r.u64();
  const std::uint8_t mode = r.u8();
  if (mode > 1) throw FormatError(r.origin() + ": unknown clustering mode tag " + std::to_string(mode));
  std::vector<ShardId> assignments(m);
  for (auto& a : assignments) a = r.u32();
  VectorSet centroids(r.f32s(c * d), c, d);
  if (r.remaining() != 0) throw FormatError(r.origin() + ": trailing bytes after partitioning");
  return make_partitioning(std::move(assignments), std::move(centroids), static_cast<ClusteringMode>(mode));
}

inline void write_partitioning(const std::string& path, const Partitioning& p) {
  write_text_file(path, serialize(p));
}

inline Partitioning read_partitioning(const std::string& path) { return deserialize_partitioning(ByteReader::from_file(path)); }

// ---------------------------------------------------------------------------
// Router model file
//
// header: "OPTR", version u32, kind u8, C u64, d u64, t u64, delta f64, T f64,
//         full_rank u8, stat u8, seed u64, partitioning checksum u64
// per shard: shard id u32, n u32, flags u8, t u32, representative count u32, reps f32[count*d],
//            has_sketch u8 [mu f32[d], diag f32[d], eigvals f32[t], eigvecs f32[t*d]],
//            has_cov u8 [cov f32[d*d]]

inline constexpr std::uint32_t kRouterVersion = 1;

inline std::string serialize(const RouterModel& model, std::uint64_t partitioning_checksum = 0) {
  ByteWriter w;
  const std::size_t d = model.dim;
  w.bytes("OPTR", 4);
  w.u32(kRouterVersion);
  w.u8(static_cast<std::uint8_t>(model.params.kind));
  w.u64(model.shard_count);
  w.u64(d);
  w.u64(model.params.full_rank ? d : model.params.rank);
  w.f64(model.params.delta);
  w.f64(model.params.threshold);
  w.u8(model.params.full_rank ? 1 : 0);
  w.u8(static_cast<std::uint8_t>(model.params.stat));
  w.u64(model.params.seed);
  w.u64(partitioning_checksum);
  for (std::size_t i = 0; i < model.shard_count; ++i) {
    const ShardState& st = model.shards[i];
    w.u32(static_cast<std::uint32_t>(i));
    w.u32(st.size);
    w.u8(st.flags);
    w.u32(static_cast<std::uint32_t>(st.sketch.rank));
    w.u32(static_cast<std::uint32_t>(st.representative_count(d)));
    w.f32s(st.representatives);
    const bool has_sketch = !st.sketch.mu.empty();
    w.u8(has_sketch ? 1 : 0);
    if (has_sketch) {
      w.f32s(st.sketch.mu);
      w.f32s(st.sketch.diag);
      w.f32s(st.sketch.eigvals);
      w.f32s(st.sketch.eigvecs);
    }
    w.u8(st.covariance.empty() ? 0 : 1);
    if (!st.covariance.empty()) w.f32s(st.covariance);
  }
  return w.buffer();
}

struct LoadedRouter {
  RouterModel model;
  std::uint64_t partitioning_checksum = 0;
};

inline LoadedRouter deserialize_router(ByteReader r) {
  r.expect_magic("OPTR");
  const std::uint32_t version = r.u32();
  if (version != kRouterVersion) throw FormatError(r.origin() + ": unsupported router version " + std::to_string(version));
  LoadedRouter out;
  RouterModel& model = out.model;
  const std::uint8_t kind = r.u8();
  if (kind > static_cast<std::uint8_t>(RouterKind::kOptimistGaussian))
    throw FormatError(r.origin() + ": unknown router kind tag " + std::to_string(kind));
  model.params.kind = static_cast<RouterKind>(kind);
  model.shard_count = r.u64();
  model.dim = r.u64();
  const std::size_t d = model.dim;
  model.params.rank = r.u64();
  model.params.delta = r.f64();
  model.params.threshold = r.f64();
  model.params.full_rank = r.u8() != 0;
  const std::uint8_t stat = r.u8();
  if (stat > 1) throw FormatError(r.origin() + ": unknown subpartition statistic tag");
  model.params.stat = static_cast<SubPartitionStat>(stat);
  model.params.seed = r.u64();
  out.partitioning_checksum = r.u64();
  try {
    validate(model.params);
  } catch (const InvalidArgument& e) {
    throw FormatError(r.origin() + ": " + e.what());
  }
  model.shards.resize(model.shard_count);
  for (std::size_t i = 0; i < model.shard_count; ++i) {
    ShardState& st = model.shards[i];
    const std::uint32_t id = r.u32();
    if (id != i) throw FormatError(r.origin() + ": shard record " + std::to_string(i) + " carries id " + std::to_string(id));
    st.size = r.u32();
    st.flags = r.u8();
    const std::uint32_t t = r.u32();
    if (t > d) throw FormatError(r.origin() + ": shard rank exceeds d");
    const std::uint32_t reps = r.u32();
    st.representatives = r.f32s(static_cast<std::size_t>(reps) * d);
    if (r.u8()) {
      st.sketch.rank = t;
      st.sketch.n = st.size;
      st.sketch.mu = r.f32s(d);
      st.sketch.diag = r.f32s(d);
      st.sketch.eigvals = r.f32s(t);
      st.sketch.eigvecs = r.f32s(static_cast<std::size_t>(t) * d);
    }
    if (r.u8()) st.covariance = r.f32s(d * d);
  }
  if (r.remaining() != 0) throw FormatError(r.origin() + ": trailing bytes after router model");
  return out;
}

inline void write_router(const std::string& path, const RouterModel& model, std::uint64_t partitioning_checksum = 0) {
  write_text_file(path, serialize(model, partitioning_checksum));
}

inline LoadedRouter read_router(const std::string& path) { return deserialize_router(ByteReader::from_file(path)); }

// ---------------------------------------------------------------------------
// Ground-truth cache: "OPTG", version, dataset checksum, query checksum, normalized u8, k, nq,
// then per query k ids (u32) and k scores (f64).

inline constexpr std::uint32_t kGroundTruthVersion = 1;

struct GroundTruthKey {
  std::uint64_t dataset = 0;
  std::uint64_t queries = 0;
  bool normalized = false;
  std::size_t k = 0;

  std::string file_name() const {
    return "gt_" + hex64(dataset) + "_" + hex64(queries) + (normalized ? "_n" : "_r") + "_k" + std::to_string(k) + ".bin";
  }
};

inline std::string serialize(const GroundTruth& gt, const GroundTruthKey& key) {
  ByteWriter w;
  w.bytes("OPTG", 4);
  w.u32(kGroundTruthVersion);
  w.u64(key.dataset);
  w.u64(key.queries);
  w.u8(key.normalized ? 1 : 0);
  w.u64(gt.k);
  w.u64(gt.query_count());
  for (const auto& q : gt.per_query) {
    w.u32(static_cast<std::uint32_t>(q.ids.size()));
    for (PointId id : q.ids) w.u32(id);
    for (double s : q.scores) w.f64(s);
  }
  return w.buffer();
}

/// Reads a cached ground truth and rejects it unless it was computed for `expected`.
inline GroundTruth deserialize_ground_truth(ByteReader r, const GroundTruthKey& expected) {
  r.expect_magic("OPTG");
  if (const auto v = r.u32(); v != kGroundTruthVersion)
    throw FormatError(r.origin() + ": unsupported ground-truth version " + std::to_string(v));
  GroundTruthKey key;
  key.dataset = r.u64();
  key.queries = r.u64();
  key.normalized = r.u8() != 0;
  GroundTruth gt;
  gt.k = key.k = r.u64();
  if (key.normalized != expected.normalized)
    throw DataError(r.origin() + ": ground truth was computed with " + (key.normalized ? "normalized" : "unnormalized") +
                    " queries, run uses " + (expected.normalized ? "normalized" : "unnormalized") + " queries");
  if (key.dataset != expected.dataset || key.queries != expected.queries || key.k != expected.k)
    throw DataError(r.origin() + ": ground truth does not match this dataset/query set/k");
  gt.per_query.resize(r.u64());
  for (auto& q : gt.per_query) {
    const std::uint32_t n = r.u32();
    q.ids.resize(n);
    q.scores.resize(n);
    for (auto& id : q.ids) id = r.u32();
    for (auto& s : q.scores) s = r.f64();
  }
  return gt;
}

}  // namespace optirouter
