#pragma once

/** \file losses.hpp
 *  \brief Training objectives for the dual encoder, with analytic gradients.
 *
 * Candidates for one training query are the labeled positive, negatives drawn
 * from the new session, and negatives replayed from memory.
 *
 *  - contrastive_loss: softmax cross-entropy with every candidate re-encoded.
 *  - rank_loss_compat: same cross-entropy, but the positive and memory
 *    negatives are scored with their frozen (previously indexed) embeddings,
 *    so only the query tower and new documents are learnable.
 *  - embed_align_loss: squared L2 pull of re-encoded old documents toward
 *    their frozen embeddings.
 *  - rank_align_loss: KL(p || p') between the compatible candidate
 *    distribution p (frozen embeddings for old documents) and the fully
 *    re-encoded distribution p'. Gradients flow through both sides unless
 *    LossConfig::detach_compatible is set.
 *
 * In-batch negatives are not used. Batch reduction is the mean.
 */

#include <cstdint>
#include <functional>
#include <optional>
#include <utility>
#include <vector>

#include "l2r/common.hpp"
#include "l2r/encoder.hpp"

namespace l2r::losses {

using encoder::EncoderParams;
using encoder::FeatureVector;
using encoder::ParamGradient;

struct Candidate {
  DocId doc_id;
  FeatureVector features;
  /// Embedding currently in the index; required for the positive and memory
  /// negatives in compat mode.
  std::optional<Embedding> frozen;
};

enum class TrainMode { no_compat, compat };

struct TrainingInstance {
  FeatureVector query;
  Candidate positive;
  std::vector<Candidate> new_negatives;
  std::vector<Candidate> memory_negatives;
  TrainMode mode = TrainMode::no_compat;

  std::size_t candidate_count() const { return 1 + new_negatives.size() + memory_negatives.size(); }
};

enum class AlignKind { none, embedding, ranking };

struct LossConfig {
  double lambda = 1.0;
  AlignKind align = AlignKind::ranking;
  /// Treat p in the KL term as a constant target.
  bool detach_compatible = false;
};

struct LossResult {
  double loss = 0.0;
  ParamGradient gradient;
};

LossResult contrastive_loss(const TrainingInstance& inst, const EncoderParams& params);
LossResult rank_loss_compat(const TrainingInstance& inst, const EncoderParams& params);
LossResult embed_align_loss(const TrainingInstance& inst, const EncoderParams& params);
LossResult rank_align_loss(const TrainingInstance& inst, const EncoderParams& params,
                           bool detach_compatible = false);
LossResult total_compat_loss(const TrainingInstance& inst, const EncoderParams& params, const LossConfig& cfg);

/// Mean of per-instance losses and gradients.
LossResult mean_over_batch(const std::vector<TrainingInstance>& batch, const EncoderParams& params,
                           const std::function<LossResult(const TrainingInstance&, const EncoderParams&)>& loss);

using LossFn = std::function<LossResult(const EncoderParams&)>;

struct FiniteDiffOptions {
  double epsilon = 1e-5;
  std::size_t samples = 64;  ///< coordinates drawn from the analytic gradient's support
  std::uint64_t seed = 7;
  double abs_floor = 1e-6;   ///< denominator floor for the relative error
  /// Extra (matrix, feature row) pairs to probe even if the analytic gradient
  /// leaves them untouched.
  std::vector<std::pair<int, std::uint32_t>> extra_rows;
};

/// Every (matrix, row) an instance's features can reach, for extra_rows.
std::vector<std::pair<int, std::uint32_t>> reachable_rows(const TrainingInstance& inst, const EncoderParams& params);

/// Max relative error between analytic and central-difference gradients
/// over a seeded sample of parameter coordinates.
double finite_diff_check(const LossFn& loss, const EncoderParams& params, const FiniteDiffOptions& opts = {});

/// log(sum(exp(x))) with max subtraction.
double log_sum_exp(const std::vector<double>& x);
/// softmax with max subtraction.
std::vector<double> softmax(const std::vector<double>& x);

}  // namespace l2r::losses
