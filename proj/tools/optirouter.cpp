// optirouter: batch driver for partitioning, router builds and evaluation.

#if __has_include(<CLI11.hpp>)
#include <CLI11.hpp>
#else
#include <CLI/CLI.hpp>
#endif

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "optirouter/experiment.hpp"
#include "optirouter/synthetic.hpp"

namespace fs = std::filesystem;
using namespace optirouter;

namespace {

struct Flags {
  std::string config;
  std::optional<std::string> dataset, queries, output, mode, l_grid, error_grid, cache_dir, subpartition_stat,
      partitioning;
  std::optional<std::size_t> shards, iterations, workers, diagnostic_rank;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> routers;
  std::vector<std::size_t> ks;
  std::vector<std::string> models;
  bool no_normalize = false;
  bool no_pred_error = false;
};

void add_common(CLI::App* app, Flags& f) {
  app->add_option("-c,--config", f.config, "JSON config file; flags override its keys")->check(CLI::ExistingFile);
  app->add_option("-o,--output", f.output, "Output directory (default: out)");
  app->add_option("--workers", f.workers, "Worker threads (default: available cores)");
  app->add_option("--seed", f.seed, "Random seed");
  app->add_option("-p,--partitioning", f.partitioning, "Partitioning file (default: <output>/partitioning.bin)");
}

void add_dataset(CLI::App* app, Flags& f) {
  app->add_option("-d,--dataset", f.dataset, "Dataset manifest (.json) or .fvecs file");
}

void add_queries(CLI::App* app, Flags& f) {
  app->add_option("-q,--queries", f.queries, "Query vectors (.fvecs)");
  app->add_flag("--no-normalize", f.no_normalize, "Keep raw query norms (raw inner-product datasets)");
  app->add_option("--cache-dir", f.cache_dir, std::string("Ground-truth cache directory (env ") + kCacheDirEnv + ")");
  app->add_option("-k,--k", f.ks, "Top-k values (default: 1 10 100)");
}

void add_partition_opts(CLI::App* app, Flags& f) {
  app->add_option("-C,--shards", f.shards, "Number of shards (default: round(sqrt(m)))");
  app->add_option("--mode", f.mode, "Clustering mode")->check(CLI::IsMember({"spherical", "standard"}));
  app->add_option("--iterations", f.iterations, "Lloyd iterations (default: 25)");
}

void add_router_opts(CLI::App* app, Flags& f) {
  app->add_option("-r,--router", f.routers,
                  "Router spec kind[:key=value,...]; kinds: mean normalized-mean scann subpartition optimist "
                  "optimist-gaussian; keys: t (integer or d) delta T stat seed");
  app->add_option("--subpartition-stat", f.subpartition_stat, "Default statistic for subpartition routers")
      ->check(CLI::IsMember({"max", "mean"}));
}

void add_model_opts(CLI::App* app, Flags& f) {
  app->add_option("-m,--model", f.models, "Router model files (default: the configured routers under <output>/models)");
}

ExperimentConfig resolve(const Flags& f) {
  ExperimentConfig c = f.config.empty() ? ExperimentConfig{} : load_config(f.config);
  if (f.dataset) c.dataset = *f.dataset;
  if (f.queries) c.queries = *f.queries;
  if (f.output) c.output = *f.output;
  if (f.mode) c.mode = parse_clustering_mode(*f.mode);
  if (f.l_grid) c.l_grid = *f.l_grid;
  if (f.error_grid) c.error_grid = *f.error_grid;
  if (f.cache_dir) c.cache_dir = *f.cache_dir;
  if (f.partitioning) c.partitioning = *f.partitioning;
  if (f.shards) c.shards = *f.shards;
  if (f.iterations) c.iterations = *f.iterations;
  if (f.workers) c.workers = *f.workers;
  if (f.diagnostic_rank) c.diagnostic_rank = *f.diagnostic_rank;
  if (f.seed) c.seed = *f.seed;
  if (!f.routers.empty()) c.routers = f.routers;
  if (!f.ks.empty()) c.ks = f.ks;
  if (f.no_normalize) c.normalize_queries = false;
  if (f.no_pred_error) c.prediction_error = false;
  if (f.subpartition_stat)
    for (auto& r : c.routers)
      if (r.rfind("subpartition", 0) == 0 && r.find("stat=") == std::string::npos)
        r += (r.find(':') == std::string::npos ? ":stat=" : ",stat=") + *f.subpartition_stat;
  validate(c);
  if (c.workers) set_worker_count(c.workers);
  return c;
}

VectorSet need_dataset(const ExperimentConfig& c) {
  if (c.dataset.empty()) throw InvalidArgument("no dataset given (--dataset or config key 'dataset')");
  return load_dataset(c.dataset);
}

VectorSet need_queries(const ExperimentConfig& c) {
  if (c.queries.empty()) throw InvalidArgument("no queries given (--queries or config key 'queries')");
  VectorSet q = read_fvecs(c.queries);
  if (q.count() == 0) throw DataError(c.queries + ": query set is empty");
  return prepare_queries(c, q);
}

Partitioning need_partitioning(const ExperimentConfig& c, const VectorSet& x) {
  Partitioning p = read_partitioning(partitioning_path(c).string());
  if (p.point_count() != x.count() || p.dim() != x.dim())
    throw DataError(partitioning_path(c).string() + ": partitioning does not match the dataset (" +
                    std::to_string(p.point_count()) + "x" + std::to_string(p.dim()) + " vs " + std::to_string(x.count()) +
                    "x" + std::to_string(x.dim()) + ")");
  return p;
}

std::vector<RouterModel> need_models(const ExperimentConfig& c, const Flags& f, const VectorSet& x,
                                     const Partitioning& p) {
  std::vector<std::string> paths = f.models;
  if (paths.empty())
    for (const auto& spec : c.routers) paths.push_back(model_path(c, parse_router_spec(spec, x.dim())).string());
  return load_models(paths, p);
}

struct SynthFlags {
  std::size_t count = 100000, dim = 64, topics = 100, queries = 1000;
  std::uint64_t seed = 7;
  std::string out = "data";
};

void run_synth(const SynthFlags& s) {
  MixtureSpec spec;
  spec.count = s.count;
  spec.dim = s.dim;
  spec.topics = s.topics;
  const auto ds = make_synthetic_dataset(spec, s.queries, s.seed);
  fs::create_directories(s.out);
  const auto base = fs::path(s.out) / "base.fvecs";
  write_fvecs(base.string(), ds.points);
  write_fvecs((fs::path(s.out) / "queries.fvecs").string(), ds.queries);
  DatasetManifest m;
  m.path = "base.fvecs";
  m.format = DatasetFormat::kFvecs;
  m.count = ds.points.count();
  m.dim = ds.points.dim();
  m.normalize = false;
  m.checksum = hex64(checksum(ds.points));
  write_manifest((fs::path(s.out) / "base.json").string(), m);
  std::cout << "synth: " << m.count << "x" << m.dim << " points, " << ds.queries.count() << " queries -> " << s.out
            << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Shard routing for clustering-based maximum inner product search"};
  app.require_subcommand(1);
  Flags f;

  auto* synth = app.add_subcommand("synth", "Generate a seeded synthetic mixture dataset with query set");
  SynthFlags sf;
  synth->add_option("--count", sf.count, "Number of points");
  synth->add_option("--dim", sf.dim, "Dimension");
  synth->add_option("--topics", sf.topics, "Mixture components");
  synth->add_option("--queries", sf.queries, "Number of queries");
  synth->add_option("--seed", sf.seed, "Random seed");
  synth->add_option("-o,--output", sf.out, "Output directory");

  auto* partition = app.add_subcommand("partition", "Cluster the dataset into shards");
  add_common(partition, f);
  add_dataset(partition, f);
  add_partition_opts(partition, f);

  auto* build = app.add_subcommand("build", "Build router models on the stored partitioning");
  add_common(build, f);
  add_dataset(build, f);
  add_router_opts(build, f);

  auto* gt = app.add_subcommand("ground-truth", "Compute (or load cached) exact top-k neighbours");
  add_common(gt, f);
  add_dataset(gt, f);
  add_queries(gt, f);

  auto* evaluate = app.add_subcommand("evaluate", "Recall vs points probed reports for router models");
  add_common(evaluate, f);
  add_dataset(evaluate, f);
  add_queries(evaluate, f);
  add_router_opts(evaluate, f);
  add_model_opts(evaluate, f);
  evaluate->add_option("--l-grid", f.l_grid, "Probe counts: all, geometric or a comma-separated list");
  evaluate->add_option("--error-grid", f.error_grid, "Probe counts for the prediction-error table");
  evaluate->add_flag("--no-pred-error", f.no_pred_error, "Skip the prediction-error table");

  auto* predict = app.add_subcommand("predict-error", "Prediction error of router scores against true shard maxima");
  add_common(predict, f);
  add_dataset(predict, f);
  add_queries(predict, f);
  add_router_opts(predict, f);
  add_model_opts(predict, f);
  predict->add_option("--error-grid", f.error_grid, "Probe counts: all, geometric or a comma-separated list");

  auto* diag = app.add_subcommand("diagnostics", "Per-shard eigenvalue and diagonal-ratio diagnostics");
  add_common(diag, f);
  add_dataset(diag, f);
  diag->add_option("-t,--rank", f.diagnostic_rank, "Sketch rank t (reports the (t+1)-th eigenvalue)");

  auto* run = app.add_subcommand("run", "partition, build and evaluate in one go");
  add_common(run, f);
  add_dataset(run, f);
  add_queries(run, f);
  add_partition_opts(run, f);
  add_router_opts(run, f);
  run->add_option("--l-grid", f.l_grid, "Probe counts: all, geometric or a comma-separated list");
  run->add_option("--error-grid", f.error_grid, "Probe counts for the prediction-error table");
  run->add_flag("--no-pred-error", f.no_pred_error, "Skip the prediction-error table");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*synth) {
      run_synth(sf);
      return 0;
    }
    const ExperimentConfig c = resolve(f);
    if (*partition) {
      cmd_partition(c, need_dataset(c));
    } else if (*build) {
      const auto x = need_dataset(c);
      cmd_build(c, x, need_partitioning(c, x));
    } else if (*gt) {
      cmd_ground_truth(c, need_dataset(c), need_queries(c));
    } else if (*evaluate) {
      const auto x = need_dataset(c);
      const auto p = need_partitioning(c, x);
      cmd_evaluate(c, x, need_queries(c), p, need_models(c, f, x, p));
    } else if (*predict) {
      const auto x = need_dataset(c);
      const auto p = need_partitioning(c, x);
      cmd_predict_error(c, x, need_queries(c), p, need_models(c, f, x, p));
      std::cout << "predict-error: wrote " << (fs::path(c.output) / "pred_error.csv").string() << "\n";
    } else if (*diag) {
      const auto x = need_dataset(c);
      cmd_diagnostics(c, x, need_partitioning(c, x));
    } else if (*run) {
      const auto x = need_dataset(c);
      const auto q = need_queries(c);
      const auto p = cmd_partition(c, x);
      const auto models = cmd_build(c, x, p);
      cmd_evaluate(c, x, q, p, models);
    }
  } catch (const InvalidArgument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
