#pragma once

/** \file lexical.hpp
 *  \brief Okapi BM25 over an incrementally built inverted index.
 *
 * Used to pre-filter new-session documents into candidate pools and as the
 * lexical baseline retriever. Documents carry the session they arrived in so
 * searches can be restricted to one session or to a session prefix.
 *
 * Thread-safety: concurrent searches are safe; add_documents must not run
 * concurrently with anything else.
 */

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "l2r/common.hpp"

namespace l2r::lexical {

/// Lowercases and splits on any non-alphanumeric byte.
std::vector<std::string> tokenize(std::string_view text);

struct Bm25Params {
  double k1 = 0.8;
  double b = 0.72;
};

struct ScoredDoc {
  DocId doc_id;
  double score = 0.0;
};

class InvertedIndex {
 public:
  struct Posting {
    std::uint32_t doc = 0;  ///< ordinal into the document table
    std::uint32_t tf = 0;
  };
  struct DocInfo {
    DocId id;
    std::uint32_t length = 0;
    int session = 0;
  };
  /// Predicate over document ordinals; see doc().
  using Filter = std::function<bool(const DocInfo&)>;

  InvertedIndex() = default;
  explicit InvertedIndex(Bm25Params params) : params_(params) {}

  /// Adds a batch. Rejects the whole batch if any id is already indexed or
  /// repeated within the batch.
  void add_documents(const std::vector<std::pair<DocId, std::vector<std::string>>>& docs, int session = 0);

  /// Top-k by BM25, descending, ties by ascending doc id. Each distinct query
  /// term contributes once. Documents rejected by `filter` are skipped but
  /// still count toward collection statistics.
  std::vector<ScoredDoc> bm25_topk(const std::vector<std::string>& query_tokens, std::size_t k,
                                   const Filter& filter = {}) const;

  /// BM25 score of one indexed document; 0 for unknown ids.
  double score(const std::vector<std::string>& query_tokens, const DocId& doc) const;

  std::size_t doc_count() const { return docs_.size(); }
  double avg_doc_len() const {
    return docs_.empty() ? 0.0 : static_cast<double>(total_length_) / static_cast<double>(docs_.size());
  }
  const Bm25Params& params() const { return params_; }
  bool contains(const DocId& id) const { return ordinal_.count(id) != 0; }
  const DocInfo& doc(std::uint32_t ordinal) const { return docs_.at(ordinal); }
  std::size_t document_frequency(const std::string& term) const;

  void save(const std::filesystem::path& path) const;
  static InvertedIndex load(const std::filesystem::path& path);

 private:
  double idf(std::size_t df) const;
  double term_weight(std::uint32_t tf, std::uint32_t doc_len) const;

  Bm25Params params_;
  std::vector<DocInfo> docs_;
  std::unordered_map<DocId, std::uint32_t> ordinal_;
  std::unordered_map<std::string, std::vector<Posting>> postings_;
  std::uint64_t total_length_ = 0;
};

}  // namespace l2r::lexical
