#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "l2r/benchmark.hpp"
#include "l2r/common.hpp"
#include "l2r/runner.hpp"

namespace l2r::testing {

/// A few hundred documents, enough for every code path to run in well under a
/// second.
inline benchmark::GeneratorConfig tiny_generator() {
  benchmark::GeneratorConfig g;
  g.domains = 4;
  g.common_domains = 2;
  g.docs_per_domain = 120;
  g.train_queries_per_domain = 8;
  g.dev_queries_per_session = 6;
  g.test_queries_per_session = 10;
  return g;
}

inline runner::RunConfig tiny_run(runner::Method m) {
  runner::RunConfig cfg;
  cfg.method = m;
  cfg.dim = 16;
  cfg.feature_dim = 1024;
  cfg.epochs_initial = 2;
  cfg.initial_negatives = 5;
  cfg.pool_initial = 100;
  cfg.pool_upcoming = 50;
  cfg.metrics = {"R@100", "MRR@10"};
  cfg.threads = 1;
  cfg.save_snapshots = false;
  return cfg;
}

inline Embedding random_vec(std::size_t dim, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Embedding v(dim);
  for (double& x : v) x = rng.uniform_real(lo, hi);
  return v;
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("l2r_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace l2r::testing
