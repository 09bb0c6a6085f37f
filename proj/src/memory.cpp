#include "l2r/memory.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <stdexcept>

#include "binary_io.hpp"
#include "l2r/geometry.hpp"

namespace l2r::memory {

namespace {

constexpr std::string_view kMagic = "L2RMEMv1";

const std::vector<MemoryEntry> kNoEntries;

std::vector<Embedding> perps_of(std::span<const Embedding> embs, std::span<const double> q) {
  std::vector<Embedding> out;
  out.reserve(embs.size());
  for (const auto& e : embs) out.push_back(geometry::proj_perp(e, q));
  return out;
}

}  // namespace

MemoryBuffer::MemoryBuffer(std::size_t capacity, std::size_t anchors, std::size_t replacements)
    : capacity_(capacity),
      anchors_(anchors == SIZE_MAX ? capacity / 3 : anchors),
      replace_(replacements == SIZE_MAX ? capacity / 3 : replacements) {
  if (capacity == 0) throw std::invalid_argument("memory capacity must be positive");
}

const std::vector<MemoryEntry>& MemoryBuffer::entries(const QueryId& q) const {
  auto it = slots_.find(q);
  return it == slots_.end() ? kNoEntries : it->second.entries;
}

bool MemoryBuffer::contains(const QueryId& q, const DocId& d) const {
  const auto& es = entries(q);
  return std::any_of(es.begin(), es.end(), [&](const MemoryEntry& e) { return e.doc_id == d; });
}

std::size_t MemoryBuffer::total_entries() const {
  std::size_t n = 0;
  for (const auto& [_, s] : slots_) n += s.entries.size();
  return n;
}

void MemoryBuffer::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write memory snapshot: " + path.string());
  out.write(kMagic.data(), kMagic.size());
  std::uint32_t dim = 0;
  for (const auto& [_, s] : slots_) {
    if (!s.entries.empty()) {
      dim = static_cast<std::uint32_t>(s.entries.front().embedding.size());
      break;
    }
  }
  io::put_u32(out, dim);
  io::put_u64(out, capacity_);
  io::put_u64(out, anchors_);
  io::put_u64(out, replace_);
  io::put_u64(out, slots_.size());
  for (const auto& [q, s] : slots_) {
    io::put_string(out, q);
    io::put_u64(out, s.seen);
    io::put_u64(out, s.entries.size());
    for (const auto& e : s.entries) {
      if (e.embedding.size() != dim) throw std::runtime_error("memory snapshot: mixed embedding dims");
      io::put_string(out, q);
      io::put_string(out, e.doc_id);
      io::put_i32(out, e.session_stored);
      for (double v : e.embedding) io::put_f32(out, static_cast<float>(v));
    }
  }
}

MemoryBuffer MemoryBuffer::load(const std::filesystem::path& path,
                                const std::function<encoder::FeatureVector(const DocId&)>& features_of) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read memory snapshot: " + path.string());
  io::expect_magic(in, kMagic, "memory snapshot " + path.string());
  const std::uint32_t dim = io::get_u32(in);
  const auto capacity = io::get_u64(in);
  const auto anchors = io::get_u64(in);
  const auto replace = io::get_u64(in);
  MemoryBuffer buf(capacity, anchors, replace);
  const auto queries = io::get_u64(in);
  for (std::uint64_t qi = 0; qi < queries; ++qi) {
    const QueryId q = io::get_string(in);
    Slots& s = buf.slots_[q];
    s.seen = io::get_u64(in);
    const auto count = io::get_u64(in);
    for (std::uint64_t k = 0; k < count; ++k) {
      MemoryEntry e;
      if (io::get_string(in) != q) throw std::runtime_error("memory snapshot: record/query mismatch");
      e.doc_id = io::get_string(in);
      e.session_stored = io::get_i32(in);
      e.embedding.resize(dim);
      for (auto& v : e.embedding) v = io::get_f32(in);
      if (features_of) e.features = features_of(e.doc_id);
      s.entries.push_back(std::move(e));
    }
  }
  return buf;
}

void TempMemory::add(const QueryId& q, MemoryEntry entry) {
  auto& list = items_[q];
  for (const auto& e : list) {
    if (e.doc_id == entry.doc_id) return;
  }
  list.push_back(std::move(entry));
}

std::size_t TempMemory::size(const QueryId& q) const {
  auto it = items_.find(q);
  return it == items_.end() ? 0 : it->second.size();
}

void reservoir_fill(MemoryBuffer& buffer, const QueryId& query, std::span<const MemoryEntry> stream, Rng& rng) {
  auto& slots = buffer.slots(query);
  for (const auto& item : stream) {
    const bool dup = std::any_of(slots.entries.begin(), slots.entries.end(),
                                 [&](const MemoryEntry& e) { return e.doc_id == item.doc_id; });
    if (dup) continue;
    ++slots.seen;
    if (slots.entries.size() < buffer.capacity()) {
      slots.entries.push_back(item);
    } else {
      const auto j = rng.uniform_index(slots.seen);
      if (j < buffer.capacity()) slots.entries[j] = item;
    }
  }
}

MemorySelection select_memory_negatives(std::span<const MemoryEntry> entries,
                                        std::span<const Embedding> entry_embeddings,
                                        std::span<const Embedding> new_negatives, std::span<const double> query,
                                        std::size_t n2) {
  if (entries.size() != entry_embeddings.size()) {
    throw std::invalid_argument("select_memory_negatives: one embedding per entry required");
  }
  MemorySelection sel;
  if (entries.size() < n2) sel.short_selection = true;
  if (entries.empty() || n2 == 0) return sel;
  const auto new_perps = perps_of(new_negatives, query);
  std::vector<double> scores;
  std::vector<DocId> ids;
  scores.reserve(entries.size());
  for (std::size_t i = 0; i < entries.size(); ++i) {
    scores.push_back(geometry::mean_distance(geometry::proj_perp(entry_embeddings[i], query), new_perps));
    ids.push_back(entries[i].doc_id);
  }
  sel.chosen = top_n_indices<DocId>(scores, ids, n2);
  return sel;
}

MemorySelection select_memory_random(std::size_t entry_count, std::size_t n2, Rng& rng) {
  MemorySelection sel;
  sel.short_selection = entry_count < n2;
  sel.chosen = rng.sample_indices(entry_count, n2);
  return sel;
}

void update_query_memory(MemoryBuffer& buffer, const QueryId& query, std::span<const MemoryEntry> candidates,
                         const EntryView& view, std::span<const double> query_embedding, Rng& rng,
                         MemoryUpdateReport& report) {
  const std::size_t size = buffer.entries(query).size();
  // A buffer no larger than k uses every entry as an anchor.
  const std::size_t k = std::min(std::max<std::size_t>(buffer.anchor_count(), 1), size);
  const auto anchors = rng.sample_indices(size, k);
  update_query_memory_with_anchors(buffer, query, candidates, view, query_embedding, anchors, report);
}

void update_query_memory_with_anchors(MemoryBuffer& buffer, const QueryId& query,
                                      std::span<const MemoryEntry> candidates, const EntryView& view,
                                      std::span<const double> query_embedding,
                                      std::span<const std::size_t> anchor_idx, MemoryUpdateReport& report) {
  auto& entries = buffer.slots(query).entries;
  std::vector<const MemoryEntry*> fresh;
  {
    std::set<DocId> seen;
    for (const auto& e : entries) seen.insert(e.doc_id);
    for (const auto& c : candidates) {
      if (seen.insert(c.doc_id).second) fresh.push_back(&c);
    }
  }
  if (fresh.empty()) return;
  ++report.queries;

  if (entries.empty()) {
    // No anchors to measure against; take candidates in arrival order.
    for (const auto* c : fresh) {
      if (entries.size() >= buffer.capacity()) break;
      entries.push_back(*c);
      ++report.filled;
    }
    return;
  }

  std::vector<bool> is_anchor(entries.size(), false);
  std::vector<Embedding> anchor_perps;
  for (auto i : anchor_idx) {
    if (i >= entries.size()) throw std::out_of_range("anchor index out of range");
    is_anchor[i] = true;
    anchor_perps.push_back(geometry::proj_perp(view(entries[i]), query_embedding));
  }
  auto anchor_isd = [&](const MemoryEntry& e) {
    return geometry::mean_distance(geometry::proj_perp(view(e), query_embedding), anchor_perps);
  };

  std::vector<double> cand_scores;
  std::vector<DocId> cand_ids;
  for (const auto* c : fresh) {
    cand_scores.push_back(anchor_isd(*c));
    cand_ids.push_back(c->doc_id);
  }
  const auto cand_order = top_n_indices<DocId>(cand_scores, cand_ids, fresh.size());

  const std::size_t inserted_before = report.inserted_isd.size();
  std::size_t next = 0;
  while (entries.size() < buffer.capacity() && next < cand_order.size()) {
    const auto ci = cand_order[next++];
    entries.push_back(*fresh[ci]);
    is_anchor.push_back(true);  // freshly filled slots are not eviction targets
    report.inserted_isd.push_back(cand_scores[ci]);
    ++report.filled;
  }

  // Least diverse non-anchor entries first; ties evict the larger doc_id.
  std::vector<std::size_t> evictable;
  std::vector<double> entry_scores(entries.size(), 0.0);
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (is_anchor[i]) continue;
    entry_scores[i] = anchor_isd(entries[i]);
    evictable.push_back(i);
  }
  std::sort(evictable.begin(), evictable.end(), [&](std::size_t a, std::size_t b) {
    if (entry_scores[a] != entry_scores[b]) return entry_scores[a] < entry_scores[b];
    return entries[a].doc_id > entries[b].doc_id;
  });

  std::vector<double> evicted_here;
  for (std::size_t s = 0; s < buffer.replace_count() && s < evictable.size() && next < cand_order.size(); ++s) {
    const auto ci = cand_order[next];
    const auto ei = evictable[s];
    if (!(cand_scores[ci] > entry_scores[ei])) {
      ++report.skipped;
      break;
    }
    ++next;
    evicted_here.push_back(entry_scores[ei]);
    report.inserted_isd.push_back(cand_scores[ci]);
    report.evicted_isd.push_back(entry_scores[ei]);
    entries[ei] = *fresh[ci];
    ++report.replaced;
  }

  if (!evicted_here.empty()) {
    const double max_evicted = *std::max_element(evicted_here.begin(), evicted_here.end());
    const double min_inserted =
        *std::min_element(report.inserted_isd.begin() + static_cast<std::ptrdiff_t>(inserted_before),
                          report.inserted_isd.end());
    if (min_inserted < max_evicted) ++report.guarantee_violations;
  }
}

MemoryUpdateReport update_memory(MemoryBuffer& buffer, TempMemory& temp, const EntryView& view,
                                 const std::map<QueryId, Embedding>& query_embeddings, Rng& rng) {
  MemoryUpdateReport report;
  for (const auto& [q, candidates] : temp.all()) {
    auto it = query_embeddings.find(q);
    if (it == query_embeddings.end()) continue;
    update_query_memory(buffer, q, candidates, view, it->second, rng, report);
  }
  temp.clear();
  return report;
}

}  // namespace l2r::memory
