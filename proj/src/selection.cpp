#include "l2r/selection.hpp"

#include <algorithm>
#include <stdexcept>

#include "l2r/geometry.hpp"

namespace l2r::selection {

void SelectionConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("alpha must lie in [0, 1]");
  if (n1 == 0) throw std::invalid_argument("n1 must be >= 1");
  if (upsample_factor == 0) throw std::invalid_argument("upsample_factor must be >= 1");
  if (bm25_pool_size < upsample_factor * n1) {
    throw std::invalid_argument("bm25_pool_size must be >= upsample_factor * n1");
  }
}

std::vector<DocId> candidate_pool(const std::vector<std::string>& query_tokens, const lexical::InvertedIndex& index,
                                  const lexical::InvertedIndex::Filter& in_session, const std::set<DocId>& exclude,
                                  std::size_t pool_size, std::size_t sample_size, Rng& rng) {
  if (pool_size == 0) return {};
  auto accept = [&](const lexical::InvertedIndex::DocInfo& d) {
    return (!in_session || in_session(d)) && exclude.count(d.id) == 0;
  };
  const auto hits = index.bm25_topk(query_tokens, pool_size, accept);
  auto picks = rng.sample_indices(hits.size(), sample_size);
  std::sort(picks.begin(), picks.end());
  std::vector<DocId> out;
  out.reserve(picks.size());
  for (auto i : picks) out.push_back(hits[i].doc_id);
  return out;
}

Selection select_new_negatives(std::span<const Embedding> pool, std::span<const DocId> ids,
                               std::span<const double> query, std::span<const double> positive,
                               const SelectionConfig& cfg) {
  if (pool.size() != ids.size()) throw std::invalid_argument("select_new_negatives: one id per pool member");
  if (!(cfg.alpha >= 0.0 && cfg.alpha <= 1.0)) throw std::invalid_argument("alpha must lie in [0, 1]");
  Selection sel;
  sel.short_selection = pool.size() < cfg.n1;
  if (pool.empty()) return sel;

  std::vector<Embedding> perps;
  perps.reserve(pool.size());
  for (const auto& d : pool) perps.push_back(geometry::proj_perp(d, query));

  sel.scores.resize(pool.size());
  for (std::size_t i = 0; i < pool.size(); ++i) {
    const double pss = geometry::pss(pool[i], positive, query);
    const double isd = geometry::mean_distance(perps[i], perps);
    sel.scores[i] = cfg.alpha * pss + (1.0 - cfg.alpha) * isd;
  }
  sel.chosen = top_n_indices<DocId>(sel.scores, ids, cfg.n1);
  return sel;
}

}  // namespace l2r::selection
