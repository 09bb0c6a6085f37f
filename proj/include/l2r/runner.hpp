#pragma once

/** \file runner.hpp
 *  \brief Session-by-session orchestration of lifelong retrieval runs.
 *
 * Session 0 trains f_0 contrastively on BM25-mined negatives and fills the
 * replay memory. Each upcoming session then indexes the new documents
 * lexically, walks the labeled training queries once per epoch (select new
 * negatives, replay memory negatives, one gradient step per micro-batch),
 * refreshes the memory and finally adds the session to the dense index.
 *
 * Methods:
 *   l2r_vanilla / l2r_emb / l2r_rank  compat training with no / embedding /
 *                                    ranking alignment, compat index
 *   l2r_nocompat                      diverse selection, contrastive, rebuild
 *   initial                           f_0 frozen forever, compat index
 *   incre_train                       random new negatives only, rebuild
 *   incre_train_emb                   same, compat with embedding alignment
 *   retrain                           fresh model on D_{0:t} each session, rebuild
 *   er / er_emb                       random replay + reservoir memory,
 *                                    rebuild / compat with embedding alignment
 */

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "l2r/benchmark.hpp"
#include "l2r/encoder.hpp"
#include "l2r/index_store.hpp"
#include "l2r/lexical.hpp"
#include "l2r/losses.hpp"
#include "l2r/memory.hpp"
#include "l2r/metrics.hpp"

#include "json.hpp"

namespace l2r::runner {

enum class Method {
  l2r_vanilla,
  l2r_emb,
  l2r_rank,
  l2r_nocompat,
  initial,
  incre_train,
  incre_train_emb,
  retrain,
  er,
  er_emb,
};

std::string method_name(Method m);
Method parse_method(const std::string& name);
const std::vector<Method>& all_methods();

struct MethodTraits {
  bool trains = true;             ///< updates parameters in upcoming sessions
  bool compat = false;            ///< backward-compatible loss and index
  losses::AlignKind align = losses::AlignKind::none;
  bool diverse_selection = false; ///< PSS/ISD selection and ISD memory update
  bool replay = false;            ///< uses the memory buffer
  bool reinit = false;            ///< retrains from scratch each session
};
MethodTraits traits_of(Method m);

struct RunConfig {
  Method method = Method::l2r_rank;
  std::string name;  ///< output directory name; defaults to "<method>_s<seed>"

  std::size_t dim = 64;
  std::uint32_t feature_dim = 8192;
  bool shared_towers = false;
  double init_scale = 30.0;  ///< multiplies the 1/sqrt(F) init bound

  double alpha = 0.6;
  double lambda = 3.0;
  bool detach_compatible = false;
  std::size_t memory_size = 30;
  std::size_t n1 = 3;
  std::size_t n2 = 2;
  std::size_t initial_negatives = 20;
  std::size_t upsample_factor = 2;

  double lr_initial = 3.0;
  double lr_upcoming = 1.0;
  int epochs_initial = 20;
  int epochs_upcoming = 1;
  std::size_t batch_size = 8;

  double bm25_k1 = 0.8;
  double bm25_b = 0.72;
  std::size_t pool_initial = 500;
  std::size_t pool_upcoming = 200;

  std::uint64_t seed = 1;
  std::vector<std::string> metrics{"R@100", "S@5", "MRR@10", "R@1000"};
  std::string primary_metric = "R@100";
  bool evaluate_future = true;  ///< fill p[i][j] for i < j as well (needed for FWT)
  std::size_t threads = 0;      ///< evaluation threads; 0 = hardware concurrency

  std::filesystem::path data;  ///< stream directory; empty = generate synthetically
  std::filesystem::path out = "runs";
  bool save_snapshots = true;  ///< memory snapshots and parameter checkpoints

  void validate() const;
  void set(const std::string& key, const std::string& value);
  std::string to_text() const;
  static RunConfig from_text(const std::string& text);
  static RunConfig load(const std::filesystem::path& path);
  static std::vector<std::string> keys();
  std::string run_name() const;
};

/// Labeled training data and cached features for one stream.
struct Workspace {
  explicit Workspace(const benchmark::SessionStream& stream, std::uint32_t feature_dim);

  const benchmark::SessionStream& stream;
  std::uint32_t feature_dim;
  std::map<DocId, encoder::FeatureVector> doc_features;
  std::map<DocId, int> doc_session;
  std::map<DocId, const benchmark::Document*> docs;

  struct TrainQuery {
    QueryId id;
    std::vector<std::string> tokens;
    encoder::FeatureVector features;
    std::vector<DocId> positives;
    std::set<DocId> exclude;
  };
  std::vector<TrainQuery> train;

  const encoder::FeatureVector& features(const DocId& id) const;
};

struct SessionReport {
  int session = 0;
  std::size_t steps = 0;
  std::size_t skipped_queries = 0;   ///< no BM25 candidates
  std::size_t failed_queries = 0;    ///< per-query errors, logged
  std::size_t short_new = 0;         ///< fewer than n1 new negatives available
  std::size_t short_memory = 0;
  std::size_t memory_filled = 0;
  std::size_t memory_replaced = 0;
  std::size_t memory_skipped = 0;
  std::size_t guarantee_violations = 0;
  std::uint64_t embed_ops = 0;
  double seconds = 0.0;
  std::vector<double> loss_curve;    ///< mean loss per gradient step
  std::vector<std::string> errors;

  nlohmann::json to_json() const;
};

struct RunState {
  RunState(const RunConfig& cfg);

  encoder::EncoderParams params;
  memory::MemoryBuffer memory;
  index_store::EmbeddingStore store;
  lexical::InvertedIndex lexical;
  int session = -1;
  std::vector<SessionReport> reports;
};

/// Called after every session with the finished state.
using SessionObserver = std::function<void(int session, const RunState& state)>;

/// Session 0: contrastive training of f_0, reservoir-filled M_0, D_0 indexed.
void train_initial_session(RunState& state, const Workspace& ws, const RunConfig& cfg);
/// One upcoming session of the configured method (dispatches to the
/// baselines where they differ).
void run_session(RunState& state, const Workspace& ws, int t, const RunConfig& cfg);
/// ER / ER+embedding alignment session: random new and memory negatives,
/// reservoir memory update.
void run_baseline_er(RunState& state, const Workspace& ws, int t, const RunConfig& cfg);

struct RunResult {
  std::map<std::string, metrics::PerfMatrix> perf;  ///< keyed by metric name
  std::vector<double> dev_perf;                     ///< dev split, primary metric, diagonal
  index_store::CostReport cost;
  std::vector<SessionReport> sessions;
  double seconds = 0.0;

  const metrics::PerfMatrix& primary(const RunConfig& cfg) const { return perf.at(cfg.primary_metric); }
  nlohmann::json summary_json(const RunConfig& cfg) const;
};

/// Fills p[i][*] for every configured metric after session i.
void evaluate_after_session(const RunState& state, const Workspace& ws, int i, const RunConfig& cfg,
                            RunResult& result);

RunResult run_stream(const benchmark::SessionStream& stream, const RunConfig& cfg,
                     const SessionObserver& observer = {});

/// run_stream plus output files under cfg.out / cfg.run_name().
RunResult run_and_write(const benchmark::SessionStream& stream, const RunConfig& cfg);

/// Resolves the data root: explicit path, else $L2R_DATA_ROOT, else empty.
std::filesystem::path resolve_data_root(const std::filesystem::path& explicit_path);

}  // namespace l2r::runner
