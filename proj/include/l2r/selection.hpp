#pragma once

// New-data negative selection: BM25 pre-filter over the current session, a
// seeded subsample, then one-shot top-n1 by
//     alpha * PSS(d, d+; q) + (1 - alpha) * ISD(d, pool; q).

#include <set>
#include <span>
#include <string>
#include <vector>

#include "l2r/common.hpp"
#include "l2r/lexical.hpp"

namespace l2r::selection {

struct SelectionConfig {
  double alpha = 0.6;
  std::size_t n1 = 3;
  std::size_t bm25_pool_size = 200;
  std::size_t upsample_factor = 2;

  void validate() const;
};

/// BM25 top-`pool_size` hits accepted by `in_session`, minus `exclude`, then
/// a seeded uniform subsample of `sample_size`, returned in BM25 rank order.
std::vector<DocId> candidate_pool(const std::vector<std::string>& query_tokens, const lexical::InvertedIndex& index,
                                  const lexical::InvertedIndex::Filter& in_session, const std::set<DocId>& exclude,
                                  std::size_t pool_size, std::size_t sample_size, Rng& rng);

struct Selection {
  std::vector<std::size_t> chosen;  ///< indices into the pool
  bool short_selection = false;
  std::vector<double> scores;       ///< joint score of every pool member
};

/// Joint PSS/ISD top-n1 over the pool. ISD references the whole pool,
/// the candidate included. Ties by ascending doc id.
Selection select_new_negatives(std::span<const Embedding> pool, std::span<const DocId> ids,
                               std::span<const double> query, std::span<const double> positive,
                               const SelectionConfig& cfg);

}  // namespace l2r::selection
