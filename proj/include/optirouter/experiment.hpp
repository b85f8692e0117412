#pragma once

// Experiment pipeline behind the command-line driver: partition, build routers, compute or load
// ground truth, evaluate, prediction error and assumption diagnostics. Each stage persists its
// artifacts under the output directory so that any stage can be rerun on its own.

#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <sstream>
#include <set>
#include <string>
#include <vector>

#include "optirouter/core.hpp"
#include "optirouter/eval.hpp"
#include "optirouter/io.hpp"
#include "optirouter/moments_sketch.hpp"
#include "optirouter/partitioner.hpp"
#include "optirouter/report.hpp"
#include "optirouter/routers.hpp"

namespace optirouter {

inline constexpr const char* kCacheDirEnv = "OPTIROUTER_CACHE_DIR";

struct ExperimentConfig {
  std::string dataset;              // manifest (.json) or .fvecs
  std::string queries;              // .fvecs
  std::size_t shards = 0;           // 0: round(sqrt(m))
  ClusteringMode mode = ClusteringMode::kSpherical;
  std::size_t iterations = 25;
  std::uint64_t seed = 42;
  std::vector<std::string> routers = {"normalized-mean", "optimist:t=d,delta=0.8"};
  std::vector<std::size_t> ks = {1, 10, 100};
  std::string l_grid = "geometric";  // all | geometric | comma-separated list
  std::string error_grid = "geometric";
  bool prediction_error = true;
  bool normalize_queries = true;
  std::size_t diagnostic_rank = 4;
  std::size_t workers = 0;
  std::string output = "out";
  std::string cache_dir;            // empty: $OPTIROUTER_CACHE_DIR, else <output>/cache
  std::string partitioning;         // empty: <output>/partitioning.bin
};

inline nlohmann::json to_json(const ExperimentConfig& c) {
  return {{"dataset", c.dataset},
          {"queries", c.queries},
          {"shards", c.shards},
          {"mode", to_string(c.mode)},
          {"iterations", c.iterations},
          {"seed", c.seed},
          {"routers", c.routers},
          {"k", c.ks},
          {"l_grid", c.l_grid},
          {"error_grid", c.error_grid},
          {"prediction_error", c.prediction_error},
          {"normalize_queries", c.normalize_queries},
          {"diagnostic_rank", c.diagnostic_rank},
          {"output", c.output}};
}

/// Applies the keys present in `j` on top of `c`.
inline void merge_json(ExperimentConfig& c, const nlohmann::json& j) {
  static const std::set<std::string> known = {
      "dataset", "queries",  "shards",          "mode",   "iterations", "seed",      "routers",     "k",
      "l_grid",  "error_grid", "prediction_error", "normalize_queries", "diagnostic_rank", "workers", "output",
      "cache_dir", "partitioning"};
  if (!j.is_object()) throw InvalidArgument("config: top level must be a JSON object");
  for (const auto& [key, value] : j.items())
    if (!known.count(key)) throw InvalidArgument("config: unknown key '" + key + "'");
  try {
    if (j.contains("dataset")) c.dataset = j["dataset"].get<std::string>();
    if (j.contains("queries")) c.queries = j["queries"].get<std::string>();
    if (j.contains("shards")) c.shards = j["shards"].get<std::size_t>();
    if (j.contains("mode")) c.mode = parse_clustering_mode(j["mode"].get<std::string>());
    if (j.contains("iterations")) c.iterations = j["iterations"].get<std::size_t>();
    if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("routers")) c.routers = j["routers"].get<std::vector<std::string>>();
    if (j.contains("k")) c.ks = j["k"].get<std::vector<std::size_t>>();
    if (j.contains("l_grid")) c.l_grid = j["l_grid"].get<std::string>();
    if (j.contains("error_grid")) c.error_grid = j["error_grid"].get<std::string>();
    if (j.contains("prediction_error")) c.prediction_error = j["prediction_error"].get<bool>();
    if (j.contains("normalize_queries")) c.normalize_queries = j["normalize_queries"].get<bool>();
    if (j.contains("diagnostic_rank")) c.diagnostic_rank = j["diagnostic_rank"].get<std::size_t>();
    if (j.contains("workers")) c.workers = j["workers"].get<std::size_t>();
    if (j.contains("output")) c.output = j["output"].get<std::string>();
    if (j.contains("cache_dir")) c.cache_dir = j["cache_dir"].get<std::string>();
    if (j.contains("partitioning")) c.partitioning = j["partitioning"].get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("config: ") + e.what());
  }
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open config '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(path + ": invalid JSON: " + e.what());
  }
  ExperimentConfig c;
  merge_json(c, j);
  return c;
}

/// Parses "kind[:key=value,...]", e.g. "optimist:t=4,delta=0.8", "scann:T=0.5",
/// "subpartition:t=2,stat=mean". "t=d" selects the full rank.
inline RouterParams parse_router_spec(const std::string& spec, std::size_t dim = 0) {
  const auto colon = spec.find(':');
  RouterParams p;
  p.kind = parse_router_kind(spec.substr(0, colon));
  if (p.kind == RouterKind::kScann) p.threshold = kDefaultScannThreshold;
  if (colon != std::string::npos) {
    std::stringstream ss(spec.substr(colon + 1));
    std::string item;
    while (std::getline(ss, item, ',')) {
      const auto eq = item.find('=');
      if (eq == std::string::npos) throw InvalidArgument("router spec '" + spec + "': expected key=value, got '" + item + "'");
      const std::string key = item.substr(0, eq), value = item.substr(eq + 1);
      try {
        if (key == "t") {
          if (value == "d") {
            p.full_rank = true;
            p.rank = dim;
          } else {
            p.rank = std::stoul(value);
          }
        } else if (key == "delta") {
          p.delta = std::stod(value);
        } else if (key == "T") {
          p.threshold = std::stod(value);
        } else if (key == "stat") {
          p.stat = parse_subpartition_stat(value);
        } else if (key == "seed") {
          p.seed = std::stoull(value);
        } else {
          throw InvalidArgument("router spec '" + spec + "': unknown key '" + key + "'");
        }
      } catch (const std::logic_error&) {
        throw InvalidArgument("router spec '" + spec + "': bad value for '" + key + "'");
      }
    }
  }
  if (dim && !p.full_rank && p.rank == dim) p.full_rank = true;
  if (dim && p.rank > dim) throw InvalidArgument("router spec '" + spec + "': t exceeds d=" + std::to_string(dim));
  validate(p);
  return p;
}

inline void validate(const ExperimentConfig& c) {
  if (c.iterations < 1) throw InvalidArgument("config: iterations must be >= 1");
  if (c.ks.empty()) throw InvalidArgument("config: k list is empty");
  for (auto k : c.ks)
    if (k < 1) throw InvalidArgument("config: k must be >= 1");
  if (c.routers.empty()) throw InvalidArgument("config: no routers requested");
  for (const auto& r : c.routers) parse_router_spec(r);
}

inline std::vector<std::size_t> parse_grid(const std::string& grid, std::size_t shard_count) {
  if (grid == "all") return full_grid(shard_count);
  if (grid == "geometric") return geometric_grid(shard_count);
  std::vector<std::size_t> out;
  std::stringstream ss(grid);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stoul(item));
    } catch (const std::logic_error&) {
      throw InvalidArgument("l grid: bad value '" + item + "'");
    }
  }
  return out;
}

inline std::string slug(const std::string& name) {
  std::string out;
  for (char ch : name) out += std::isalnum(static_cast<unsigned char>(ch)) || ch == '.' ? ch : '_';
  while (!out.empty() && out.back() == '_') out.pop_back();
  return out;
}

// ---------------------------------------------------------------------------
// Artifact locations

inline std::filesystem::path partitioning_path(const ExperimentConfig& c) {
  if (!c.partitioning.empty()) return c.partitioning;
  return std::filesystem::path(c.output) / "partitioning.bin";
}
inline std::filesystem::path model_path(const ExperimentConfig& c, const RouterParams& p) {
  return std::filesystem::path(c.output) / "models" / (slug(p.name()) + ".bin");
}
inline std::filesystem::path cache_dir(const ExperimentConfig& c) {
  if (!c.cache_dir.empty()) return c.cache_dir;
  if (const char* env = std::getenv(kCacheDirEnv); env && *env) return env;
  return std::filesystem::path(c.output) / "cache";
}

inline void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw DataError("cannot create directory '" + dir.string() + "': " + ec.message());
}

// ---------------------------------------------------------------------------
// Stages

struct PartitionSummary {
  std::size_t shard_count = 0;
  std::size_t min_size = 0, max_size = 0;
  double mean_size = 0.0;
  std::size_t empty = 0;
};

inline PartitionSummary summarize(const Partitioning& p) {
  PartitionSummary s;
  s.shard_count = p.shard_count();
  s.min_size = p.point_count();
  for (const auto& sh : p.shards) {
    s.min_size = std::min(s.min_size, sh.size());
    s.max_size = std::max(s.max_size, sh.size());
    s.empty += sh.empty();
  }
  s.mean_size = s.shard_count ? static_cast<double>(p.point_count()) / static_cast<double>(s.shard_count) : 0.0;
  return s;
}

inline Partitioning cmd_partition(const ExperimentConfig& c, const VectorSet& x, std::ostream& log = std::cout) {
  const std::size_t shards = c.shards ? c.shards : default_shard_count(x.count());
  Partitioning p = fit_kmeans(x, KMeansOptions{shards, c.iterations, c.seed, c.mode});
  ensure_dir(c.output);
  write_partitioning(partitioning_path(c).string(), p);
  const auto s = summarize(p);
  log << "partition: C=" << s.shard_count << " mode=" << to_string(c.mode) << " iterations=" << p.objective_history.size()
      << " shard size min/mean/max=" << s.min_size << "/" << s.mean_size << "/" << s.max_size << " empty=" << s.empty
      << "\n";
  return p;
}

inline std::vector<RouterModel> cmd_build(const ExperimentConfig& c, const VectorSet& x, const Partitioning& p,
                                          std::ostream& log = std::cout) {
  ensure_dir(std::filesystem::path(c.output) / "models");
  std::vector<RouterModel> models;
  const std::uint64_t pc = checksum(p);
  for (const auto& spec : c.routers) {
    RouterParams params = parse_router_spec(spec, x.dim());
    if (params.kind == RouterKind::kSubPartition && params.seed == 0) params.seed = c.seed;
    const auto start = std::chrono::steady_clock::now();
    RouterModel model = build_router(params, p, x);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    write_router(model_path(c, model.params).string(), model, pc);
    log << "build: " << model.name() << " in " << secs << " s -> " << model_path(c, model.params).string() << "\n";
    models.push_back(std::move(model));
  }
  return models;
}

/// Loads router models and rejects any built on a different partitioning.
inline std::vector<RouterModel> load_models(const std::vector<std::string>& paths, const Partitioning& p) {
  std::vector<RouterModel> models;
  const std::uint64_t pc = checksum(p);
  for (const auto& path : paths) {
    auto loaded = read_router(path);
    if (loaded.partitioning_checksum != pc)
      throw DataError(path + ": model was built on a different partitioning (checksum " +
                      hex64(loaded.partitioning_checksum) + ", expected " + hex64(pc) + ")");
    models.push_back(std::move(loaded.model));
  }
  return models;
}

inline VectorSet prepare_queries(const ExperimentConfig& c, const VectorSet& raw) {
  return c.normalize_queries ? normalize_rows(raw) : raw;
}

/// Ground truth per requested k, read from the cache when present, computed and cached otherwise.
inline std::vector<GroundTruth> cmd_ground_truth(const ExperimentConfig& c, const VectorSet& x, const VectorSet& queries,
                                                 std::ostream& log = std::cout) {
  const auto dir = cache_dir(c);
  ensure_dir(dir);
  std::vector<GroundTruth> out;
  for (std::size_t k : c.ks) {
    if (k > x.count())
      throw InvalidArgument("k=" + std::to_string(k) + " exceeds dataset size m=" + std::to_string(x.count()));
    const GroundTruthKey key{checksum(x), checksum(queries), c.normalize_queries, k};
    const auto path = dir / key.file_name();
    if (std::filesystem::exists(path)) {
      out.push_back(deserialize_ground_truth(ByteReader::from_file(path.string()), key));
      log << "ground-truth: k=" << k << " loaded from " << path.string() << "\n";
      continue;
    }
    out.push_back(ground_truth(x, queries, k));
    write_text_file(path.string(), serialize(out.back(), key));
    log << "ground-truth: k=" << k << " computed and cached at " << path.string() << "\n";
  }
  return out;
}

inline std::vector<PredictionErrorTable> cmd_predict_error(const ExperimentConfig& c, const VectorSet& x,
                                                           const VectorSet& queries, const Partitioning& p,
                                                           const std::vector<RouterModel>& models) {
  std::vector<const RouterModel*> ptrs;
  for (const auto& m : models) ptrs.push_back(&m);
  auto tables = prediction_errors(ptrs, p, x, queries, parse_grid(c.error_grid, p.shard_count()));
  ensure_dir(c.output);
  write_text_file((std::filesystem::path(c.output) / "pred_error.csv").string(), prediction_error_csv(tables));
  return tables;
}

/// Writes report_k<k>.csv / .json per k. Returns the paths of the CSV files.
inline std::vector<std::string> cmd_evaluate(const ExperimentConfig& c, const VectorSet& x, const VectorSet& queries,
                                             const Partitioning& p, const std::vector<RouterModel>& models,
                                             std::ostream& log = std::cout) {
  if (models.empty()) throw InvalidArgument("evaluate: no router models");
  const auto truths = cmd_ground_truth(c, x, queries, log);
  std::vector<const RouterModel*> ptrs;
  for (const auto& m : models) ptrs.push_back(&m);
  std::vector<const GroundTruth*> gts;
  for (const auto& g : truths) gts.push_back(&g);
  const auto curves = recall_curves(ptrs, p, x, queries, gts, parse_grid(c.l_grid, p.shard_count()));
  std::vector<PredictionErrorTable> tables;
  if (c.prediction_error) tables = cmd_predict_error(c, x, queries, p, models);

  ensure_dir(c.output);
  std::vector<std::string> written;
  const nlohmann::json config = to_json(c);
  for (std::size_t ki = 0; ki < c.ks.size(); ++ki) {
    std::vector<RecallCurve> for_k;
    for (std::size_t mi = 0; mi < models.size(); ++mi) for_k.push_back(curves[mi * c.ks.size() + ki]);
    const auto stem = (std::filesystem::path(c.output) / ("report_k" + std::to_string(c.ks[ki]))).string();
    emit_report(for_k, tables, stem, config);
    written.push_back(stem + ".csv");
    log << "evaluate: wrote " << stem << ".csv\n";
  }
  return written;
}

struct DiagnosticsSummary {
  std::size_t shards_reported = 0;
  std::size_t excluded_single_point = 0;
  std::size_t above_one = 0;  // shards with lambda_{t+1} > 1
};

/// Per-shard (t+1)-th eigenvalue of D^-1/2 Sigma D^-1/2 and min/max diagonal ratio as CSV.
inline DiagnosticsSummary cmd_diagnostics(const ExperimentConfig& c, const VectorSet& x, const Partitioning& p,
                                          std::ostream& log = std::cout) {
  const std::size_t t = c.diagnostic_rank;
  std::vector<AssumptionDiagnostics> rows(p.shard_count());
  std::vector<char> excluded(p.shard_count(), 0);
  parallel_for(p.shard_count(), [&](std::size_t i) {
    if (p.shards[i].size() < 2) {
      excluded[i] = 1;
      return;
    }
    rows[i] = assumption_diagnostics(compute_moments(extract_shard(x, p, static_cast<ShardId>(i))), t);
  });
  DiagnosticsSummary s;
  std::string csv = "shard,n,t,lambda_t_plus_1,diag_ratio\n";
  for (std::size_t i = 0; i < p.shard_count(); ++i) {
    if (excluded[i]) {
      ++s.excluded_single_point;
      continue;
    }
    ++s.shards_reported;
    s.above_one += rows[i].lambda_t_plus_1 > 1.0;
    csv += std::to_string(i) + "," + std::to_string(p.shards[i].size()) + "," + std::to_string(t) + "," +
           detail::fmt_double(rows[i].lambda_t_plus_1, 9) + "," + detail::fmt_double(rows[i].diag_ratio, 9) + "\n";
  }
  ensure_dir(c.output);
  write_text_file((std::filesystem::path(c.output) / "diagnostics.csv").string(), csv);
  log << "diagnostics: " << s.shards_reported << " shards, " << s.above_one << " with lambda_{t+1} > 1, "
      << s.excluded_single_point << " single-point shards excluded\n";
  return s;
}

}  // namespace optirouter
