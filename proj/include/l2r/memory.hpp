#pragma once

/** \file memory.hpp
 *  \brief Per-query replay memory.
 *
 * Each training query owns up to `capacity` slots of historical negatives.
 * Entries keep the token features (for re-encoding) and the embedding that was
 * in force when they were stored (for backward-compatible training).
 *
 * Lifecycle within a session: replay negatives are chosen by maximum ISD
 * against the freshly selected new negatives; the new negatives are collected
 * in a TempMemory; after training the buffer is refreshed by swapping its
 * least diverse entries for the most diverse candidates, measured against a
 * few randomly sampled anchor entries. The first session fills the buffer by
 * reservoir sampling instead.
 */

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <vector>

#include "l2r/common.hpp"
#include "l2r/encoder.hpp"

namespace l2r::memory {

struct MemoryEntry {
  DocId doc_id;
  encoder::FeatureVector features;
  Embedding embedding;
  int session_stored = 0;
};

/// Which embedding stands for an entry: the stored one in compat mode, a
/// fresh encoding otherwise.
using EntryView = std::function<Embedding(const MemoryEntry&)>;

class MemoryBuffer {
 public:
  struct Slots {
    std::vector<MemoryEntry> entries;
    std::uint64_t seen = 0;  ///< reservoir stream position
  };

  /// anchors and replacements default to floor(capacity / 3).
  explicit MemoryBuffer(std::size_t capacity = 30, std::size_t anchors = SIZE_MAX,
                        std::size_t replacements = SIZE_MAX);

  std::size_t capacity() const { return capacity_; }
  std::size_t anchor_count() const { return anchors_; }
  std::size_t replace_count() const { return replace_; }

  const std::vector<MemoryEntry>& entries(const QueryId& q) const;
  Slots& slots(const QueryId& q) { return slots_[q]; }
  const std::map<QueryId, Slots>& all() const { return slots_; }
  bool contains(const QueryId& q, const DocId& d) const;
  std::size_t total_entries() const;

  /// Records: per query (query_id, seen) then (query_id, doc_id,
  /// session_stored, float32 embedding). Features are not persisted;
  /// `features_of` re-attaches them on load when given.
  void save(const std::filesystem::path& path) const;
  static MemoryBuffer load(const std::filesystem::path& path,
                           const std::function<encoder::FeatureVector(const DocId&)>& features_of = {});

 private:
  std::size_t capacity_;
  std::size_t anchors_;
  std::size_t replace_;
  std::map<QueryId, Slots> slots_;
};

/// Candidates accumulated during a session, per query, without duplicates.
class TempMemory {
 public:
  void add(const QueryId& q, MemoryEntry entry);
  const std::map<QueryId, std::vector<MemoryEntry>>& all() const { return items_; }
  std::size_t size(const QueryId& q) const;
  void clear() { items_.clear(); }
  bool empty() const { return items_.empty(); }

 private:
  std::map<QueryId, std::vector<MemoryEntry>> items_;
};

/// Algorithm R over `stream`, continuing the query's stream position.
/// Entries whose doc_id is already stored are skipped.
void reservoir_fill(MemoryBuffer& buffer, const QueryId& query, std::span<const MemoryEntry> stream, Rng& rng);

struct MemorySelection {
  std::vector<std::size_t> chosen;  ///< indices into the entry list
  bool short_selection = false;
};

/// Top-n2 entries by ISD against the new negatives; ties by ascending doc_id.
/// `entry_embeddings[i]` is the view of `entries[i]`.
MemorySelection select_memory_negatives(std::span<const MemoryEntry> entries,
                                        std::span<const Embedding> entry_embeddings,
                                        std::span<const Embedding> new_negatives, std::span<const double> query,
                                        std::size_t n2);

/// Uniform random pick of n2 entries (the ER baseline).
MemorySelection select_memory_random(std::size_t entry_count, std::size_t n2, Rng& rng);

struct MemoryUpdateReport {
  std::size_t queries = 0;
  std::size_t filled = 0;    ///< candidates placed into free slots
  std::size_t replaced = 0;  ///< evictions
  std::size_t skipped = 0;   ///< swaps rejected because the candidate was not more diverse
  /// Anchor-ISD of every inserted candidate / evicted entry, paired by swap.
  std::vector<double> inserted_isd;
  std::vector<double> evicted_isd;
  std::size_t guarantee_violations = 0;
};

/// Diversity-driven refresh of one query's slots from its candidates.
void update_query_memory(MemoryBuffer& buffer, const QueryId& query, std::span<const MemoryEntry> candidates,
                         const EntryView& view, std::span<const double> query_embedding, Rng& rng,
                         MemoryUpdateReport& report);

/// Same refresh with caller-chosen anchor indices into the query's slots.
void update_query_memory_with_anchors(MemoryBuffer& buffer, const QueryId& query,
                                      std::span<const MemoryEntry> candidates, const EntryView& view,
                                      std::span<const double> query_embedding,
                                      std::span<const std::size_t> anchor_indices, MemoryUpdateReport& report);

/// Refreshes every query present in `temp`, then clears `temp`. Queries
/// missing from `query_embeddings` are skipped.
MemoryUpdateReport update_memory(MemoryBuffer& buffer, TempMemory& temp, const EntryView& view,
                                 const std::map<QueryId, Embedding>& query_embeddings, Rng& rng);

}  // namespace l2r::memory
