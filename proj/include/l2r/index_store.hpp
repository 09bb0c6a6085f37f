#pragma once

/** \file index_store.hpp
 *  \brief Dense retrieval index with model-version provenance.
 *
 * In compat mode a document is encoded once, by the model of the session it
 * arrived in, and its record is never rewritten. In rebuild mode every
 * session re-encodes the whole collection with the latest model. Every
 * document-tower forward pass is counted so the two regimes can be compared.
 *
 * Embeddings are held as 32-bit floats, the same precision as the on-disk
 * format, so a saved store reloads bit-identically.
 */

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <vector>

#include "l2r/common.hpp"
#include "l2r/encoder.hpp"

#include "json.hpp"

namespace l2r::index_store {

enum class StoreMode { compat, rebuild };

/// Re-embedding accounting, usable without any encoder.
class CostLedger {
 public:
  struct SessionCost {
    int session = 0;
    std::uint64_t new_docs = 0;
    std::uint64_t encoded = 0;
  };

  /// Records one session and returns the number of document encodings it
  /// costs: the delta in compat mode, the whole collection in rebuild mode.
  std::uint64_t record_session(int session, std::uint64_t new_docs, StoreMode mode);

  std::uint64_t total() const { return total_; }
  std::uint64_t docs_stored() const { return docs_; }
  const std::vector<SessionCost>& sessions() const { return sessions_; }
  /// Encodings spent in sessions [from, to].
  std::uint64_t encoded_between(int from, int to) const;

 private:
  std::uint64_t total_ = 0;
  std::uint64_t docs_ = 0;
  std::vector<SessionCost> sessions_;
};

struct StoreDoc {
  DocId doc_id;
  encoder::FeatureVector features;
};

struct StoreRecord {
  std::vector<float> embedding;
  std::int32_t model_version = 0;
  std::int32_t session_added = 0;
};

struct SearchHit {
  DocId doc_id;
  double score = 0.0;
};

struct CostReport {
  std::uint64_t embed_ops = 0;
  std::uint64_t docs_stored = 0;
  std::vector<CostLedger::SessionCost> per_session;

  nlohmann::json to_json() const;
};

class EmbeddingStore {
 public:
  explicit EmbeddingStore(std::size_t dim = 0) : dim_(dim) {}

  /// Adds a session's documents. Compat: encodes only `docs`; an id already
  /// present is an error. Rebuild: re-encodes everything with `params`.
  /// An empty session leaves the store untouched in both modes.
  void upsert_session(int session, std::span<const StoreDoc> docs, const encoder::EncoderParams& params,
                      StoreMode mode);

  /// Exact dot-product top-k, descending, ties by ascending doc id. Only
  /// records with session_added <= max_session take part.
  std::vector<SearchHit> search_topk(std::span<const double> query, std::size_t k,
                                     int max_session = INT32_MAX) const;

  std::size_t size() const { return records_.size(); }
  std::size_t dim() const { return dim_; }
  bool contains(const DocId& id) const { return records_.count(id) != 0; }
  const StoreRecord& record(const DocId& id) const { return records_.at(id); }
  const std::map<DocId, StoreRecord>& records() const { return records_; }
  Embedding embedding(const DocId& id) const;

  std::uint64_t embed_op_counter() const { return ledger_.total(); }
  const CostLedger& ledger() const { return ledger_; }
  CostReport cost_report() const;

  /// FNV-1a over one record's embedding bytes.
  std::uint64_t record_hash(const DocId& id) const;
  /// Order-stable hash over all records added in `session`.
  std::uint64_t session_hash(int session) const;

  /// Little-endian: magic, dim, count, embed ops, ledger, then per record
  /// (doc_id, model_version, session_added, float32 x dim).
  void save(const std::filesystem::path& path) const;
  static EmbeddingStore load(const std::filesystem::path& path);

 private:
  std::vector<float> encode_doc(const encoder::EncoderParams& params, const encoder::FeatureVector& x);

  std::size_t dim_;
  std::map<DocId, StoreRecord> records_;
  std::map<DocId, encoder::FeatureVector> features_;
  CostLedger ledger_;
};

}  // namespace l2r::index_store
