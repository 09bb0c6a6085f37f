#include "l2r/index_store.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <set>
#include <stdexcept>

#include "binary_io.hpp"

namespace l2r::index_store {

namespace {

constexpr std::string_view kMagic = "L2REMBv1";

bool ranks_before(const SearchHit& a, const SearchHit& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.doc_id < b.doc_id;
}

}  // namespace

std::uint64_t CostLedger::record_session(int session, std::uint64_t new_docs, StoreMode mode) {
  if (new_docs == 0) return 0;
  docs_ += new_docs;
  const std::uint64_t encoded = mode == StoreMode::compat ? new_docs : docs_;
  total_ += encoded;
  sessions_.push_back({session, new_docs, encoded});
  return encoded;
}

std::uint64_t CostLedger::encoded_between(int from, int to) const {
  std::uint64_t n = 0;
  for (const auto& s : sessions_) {
    if (s.session >= from && s.session <= to) n += s.encoded;
  }
  return n;
}

nlohmann::json CostReport::to_json() const {
  nlohmann::json sessions = nlohmann::json::array();
  for (const auto& s : per_session) {
    sessions.push_back({{"session", s.session}, {"new_docs", s.new_docs}, {"encoded", s.encoded}});
  }
  return {{"embed_ops", embed_ops}, {"docs_stored", docs_stored}, {"per_session", sessions}};
}

std::vector<float> EmbeddingStore::encode_doc(const encoder::EncoderParams& params, const encoder::FeatureVector& x) {
  const Embedding e = encoder::encode(params, x, encoder::Tower::document);
  std::vector<float> out(e.size());
  for (std::size_t i = 0; i < e.size(); ++i) out[i] = static_cast<float>(e[i]);
  return out;
}

void EmbeddingStore::upsert_session(int session, std::span<const StoreDoc> docs, const encoder::EncoderParams& params,
                                    StoreMode mode) {
  if (docs.empty()) return;
  if (dim_ == 0) dim_ = params.dim();
  if (params.dim() != dim_) throw std::invalid_argument("upsert_session: encoder dim differs from store dim");

  std::set<DocId> batch;
  for (const auto& d : docs) {
    if (!batch.insert(d.doc_id).second) throw std::invalid_argument("duplicate doc_id in session: " + d.doc_id);
    if (records_.count(d.doc_id) != 0) {
      throw std::invalid_argument("doc_id already indexed (compat records are immutable): " + d.doc_id);
    }
  }

  const auto expected = ledger_.record_session(session, docs.size(), mode);
  std::uint64_t encoded = 0;
  for (const auto& d : docs) {
    features_.emplace(d.doc_id, d.features);
    records_.emplace(d.doc_id, StoreRecord{encode_doc(params, d.features), session, session});
    ++encoded;
  }
  if (mode == StoreMode::rebuild) {
    for (auto& [id, rec] : records_) {
      if (rec.session_added == session && batch.count(id) != 0) continue;
      auto f = features_.find(id);
      if (f == features_.end()) throw std::runtime_error("rebuild needs features for " + id);
      rec.embedding = encode_doc(params, f->second);
      rec.model_version = session;
      ++encoded;
    }
  }
  if (encoded != expected) throw std::logic_error("embedding counter out of sync with encodes");
}

std::vector<SearchHit> EmbeddingStore::search_topk(std::span<const double> query, std::size_t k,
                                                   int max_session) const {
  if (k == 0) throw std::invalid_argument("search_topk requires k >= 1");
  if (!records_.empty() && query.size() != dim_) throw std::invalid_argument("search_topk: query dim mismatch");
  std::vector<SearchHit> hits;
  hits.reserve(records_.size());
  for (const auto& [id, rec] : records_) {
    if (rec.session_added > max_session) continue;
    double s = 0.0;
    for (std::size_t c = 0; c < dim_; ++c) s += query[c] * static_cast<double>(rec.embedding[c]);
    hits.push_back({id, s});
  }
  const std::size_t keep = std::min(k, hits.size());
  std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(keep), hits.end(), ranks_before);
  hits.resize(keep);
  return hits;
}

Embedding EmbeddingStore::embedding(const DocId& id) const {
  const auto& rec = records_.at(id);
  return Embedding(rec.embedding.begin(), rec.embedding.end());
}

CostReport EmbeddingStore::cost_report() const {
  return {ledger_.total(), ledger_.docs_stored(), ledger_.sessions()};
}

std::uint64_t EmbeddingStore::record_hash(const DocId& id) const {
  const auto& e = records_.at(id).embedding;
  return fnv1a64(std::span<const unsigned char>(reinterpret_cast<const unsigned char*>(e.data()),
                                                e.size() * sizeof(float)));
}

std::uint64_t EmbeddingStore::session_hash(int session) const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& [id, rec] : records_) {
    if (rec.session_added != session) continue;
    h = fnv1a64(id, h);
    h = fnv1a64(std::span<const unsigned char>(reinterpret_cast<const unsigned char*>(rec.embedding.data()),
                                               rec.embedding.size() * sizeof(float)),
                h);
  }
  return h;
}

void EmbeddingStore::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write embedding store: " + path.string());
  out.write(kMagic.data(), kMagic.size());
  io::put_u32(out, static_cast<std::uint32_t>(dim_));
  io::put_u64(out, records_.size());
  io::put_u64(out, ledger_.total());
  io::put_u32(out, static_cast<std::uint32_t>(ledger_.sessions().size()));
  for (const auto& s : ledger_.sessions()) {
    io::put_i32(out, s.session);
    io::put_u64(out, s.new_docs);
    io::put_u64(out, s.encoded);
  }
  for (const auto& [id, rec] : records_) {
    io::put_string(out, id);
    io::put_i32(out, rec.model_version);
    io::put_i32(out, rec.session_added);
    for (float v : rec.embedding) io::put_f32(out, v);
  }
}

EmbeddingStore EmbeddingStore::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read embedding store: " + path.string());
  io::expect_magic(in, kMagic, "embedding store " + path.string());
  EmbeddingStore store(io::get_u32(in));
  const auto count = io::get_u64(in);
  const auto ops = io::get_u64(in);
  const auto n_sessions = io::get_u32(in);
  for (std::uint32_t i = 0; i < n_sessions; ++i) {
    const int session = io::get_i32(in);
    const auto new_docs = io::get_u64(in);
    const auto encoded = io::get_u64(in);
    const auto mode = encoded == new_docs ? StoreMode::compat : StoreMode::rebuild;
    if (store.ledger_.record_session(session, new_docs, mode) != encoded) {
      throw std::runtime_error("embedding store: inconsistent cost ledger");
    }
  }
  if (store.ledger_.total() != ops) throw std::runtime_error("embedding store: counter mismatch");
  for (std::uint64_t i = 0; i < count; ++i) {
    DocId id = io::get_string(in);
    StoreRecord rec;
    rec.model_version = io::get_i32(in);
    rec.session_added = io::get_i32(in);
    rec.embedding.resize(store.dim_);
    for (float& v : rec.embedding) v = io::get_f32(in);
    store.records_.emplace(std::move(id), std::move(rec));
  }
  return store;
}

}  // namespace l2r::index_store
