#include <cmath>
#include <set>

#include "doctest.h"
#include "l2r/geometry.hpp"
#include "l2r/memory.hpp"
#include "support.hpp"

using namespace l2r;
using namespace l2r::memory;

namespace {

MemoryEntry entry(const std::string& id, Embedding e) { return MemoryEntry{id, {}, std::move(e), 0}; }

const EntryView stored_view = [](const MemoryEntry& e) { return e.embedding; };

std::vector<MemoryEntry> numbered(int n, int offset = 0) {
  std::vector<MemoryEntry> out;
  for (int i = 0; i < n; ++i) {
    char id[16];
    std::snprintf(id, sizeof id, "d%04d", i + offset);
    out.push_back(entry(id, {static_cast<double>(i), 1.0}));
  }
  return out;
}

// Mean distance between perpendicular parts, written without the library.
double oracle_isd(const Embedding& d, const std::vector<Embedding>& others, const Embedding& q) {
  auto perp = [&](const Embedding& v) {
    double dot = 0, qq = 0;
    for (std::size_t i = 0; i < v.size(); ++i) {
      dot += v[i] * q[i];
      qq += q[i] * q[i];
    }
    Embedding out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] - dot / qq * q[i];
    return out;
  };
  const auto pd = perp(d);
  double s = 0.0;
  for (const auto& o : others) {
    const auto po = perp(o);
    double d2 = 0.0;
    for (std::size_t i = 0; i < pd.size(); ++i) d2 += (pd[i] - po[i]) * (pd[i] - po[i]);
    s += std::sqrt(d2);
  }
  return s / static_cast<double>(others.size());
}

}  // namespace

TEST_CASE("buffer defaults") {
  MemoryBuffer m;
  CHECK(m.capacity() == 30);
  CHECK(m.anchor_count() == 10);
  CHECK(m.replace_count() == 10);
  CHECK(m.entries("nobody").empty());
}

TEST_CASE("reservoir below capacity keeps the whole stream") {
  MemoryBuffer m(10);
  Rng rng(1);
  const auto s = numbered(7);
  reservoir_fill(m, "q", s, rng);
  REQUIRE(m.entries("q").size() == 7);
  for (int i = 0; i < 7; ++i) CHECK(m.entries("q")[static_cast<std::size_t>(i)].doc_id == s[static_cast<std::size_t>(i)].doc_id);
  // duplicates are skipped and do not advance the stream
  reservoir_fill(m, "q", s, rng);
  CHECK(m.entries("q").size() == 7);
  CHECK(m.slots("q").seen == 7);
}

TEST_CASE("reservoir is deterministic and continues across calls") {
  const auto s = numbered(100);
  auto run = [&](std::uint64_t seed) {
    MemoryBuffer m(10);
    Rng rng(seed);
    reservoir_fill(m, "q", std::span(s).subspan(0, 40), rng);
    reservoir_fill(m, "q", std::span(s).subspan(40), rng);
    std::vector<DocId> ids;
    for (const auto& e : m.entries("q")) ids.push_back(e.doc_id);
    return ids;
  };
  CHECK(run(5) == run(5));
  CHECK(run(5) != run(6));
  CHECK(run(5).size() == 10);
}

TEST_CASE("reservoir inclusion is uniform") {
  const auto s = numbered(100);
  std::vector<int> hits(100, 0);
  Rng rng(2024);
  const int trials = 4000;
  for (int t = 0; t < trials; ++t) {
    MemoryBuffer m(10);
    reservoir_fill(m, "q", s, rng);
    for (const auto& e : m.entries("q")) ++hits[static_cast<std::size_t>(std::stoi(e.doc_id.substr(1)))];
  }
  const double sigma = std::sqrt(0.1 * 0.9 / trials);
  for (int h : hits) CHECK(std::abs(h / static_cast<double>(trials) - 0.1) < 4.5 * sigma);
}

TEST_CASE("memory negatives: hand ISD ordering") {
  const Embedding q{1, 0};
  const std::vector<Embedding> news{{3, 0}, {-1, 0}};
  std::vector<MemoryEntry> es{entry("a", {0, 1}), entry("b", {2, 5}), entry("c", {0, 2})};
  std::vector<Embedding> views;
  for (const auto& e : es) views.push_back(e.embedding);
  const auto sel = select_memory_negatives(es, views, news, q, 2);
  CHECK(sel.chosen == std::vector<std::size_t>{1, 2});
  CHECK_FALSE(sel.short_selection);
  const auto all = select_memory_negatives(es, views, news, q, 3);
  CHECK(std::set<std::size_t>(all.chosen.begin(), all.chosen.end()).size() == 3);
  CHECK(select_memory_negatives(es, views, news, q, 5).short_selection);
}

TEST_CASE("memory negatives match an exhaustive oracle") {
  Rng rng(41);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng.uniform_index(40);
    const auto q = testing::random_vec(4, rng);
    std::vector<Embedding> news;
    for (int k = 0; k < 3; ++k) news.push_back(testing::random_vec(4, rng));
    std::vector<MemoryEntry> es;
    std::vector<Embedding> views;
    for (std::size_t i = 0; i < n; ++i) {
      // quantized coordinates make exact ties common
      Embedding v(4);
      for (double& x : v) x = static_cast<double>(rng.uniform_index(3));
      es.push_back(entry("m" + std::to_string(rng.uniform_index(1000000)) + "_" + std::to_string(i), v));
      views.push_back(v);
    }
    const std::size_t n2 = 1 + rng.uniform_index(5);
    const auto sel = select_memory_negatives(es, views, news, q, n2);

    std::vector<std::size_t> expect(n);
    std::iota(expect.begin(), expect.end(), std::size_t{0});
    std::vector<double> sc(n);
    for (std::size_t i = 0; i < n; ++i) sc[i] = oracle_isd(views[i], news, q);
    std::sort(expect.begin(), expect.end(), [&](std::size_t a, std::size_t b) {
      if (std::abs(sc[a] - sc[b]) > 1e-12) return sc[a] > sc[b];
      return es[a].doc_id < es[b].doc_id;
    });
    expect.resize(std::min(n, n2));
    CHECK(sel.chosen == expect);
  }
}

TEST_CASE("random memory negatives") {
  Rng rng(3);
  const auto s = select_memory_random(10, 4, rng);
  CHECK(std::set<std::size_t>(s.chosen.begin(), s.chosen.end()).size() == 4);
  const auto whole = select_memory_random(3, 3, rng);
  CHECK(std::set<std::size_t>(whole.chosen.begin(), whole.chosen.end()) == std::set<std::size_t>{0, 1, 2});
  CHECK(select_memory_random(2, 3, rng).short_selection);
}

TEST_CASE("update: least diverse entry is evicted") {
  MemoryBuffer m(4, 1, 1);
  auto& es = m.slots("q").entries;
  es = {entry("anchor", {5, 0}), entry("e1", {1, 0.1}), entry("e5", {2, 0.5}), entry("e9", {3, 0.9})};
  const std::vector<MemoryEntry> cands{entry("new", {0, 2.0})};
  MemoryUpdateReport rep;
  const std::vector<std::size_t> anchors{0};
  update_query_memory_with_anchors(m, "q", cands, stored_view, Embedding{1, 0}, anchors, rep);
  CHECK(rep.replaced == 1);
  REQUIRE(rep.evicted_isd.size() == 1);
  CHECK(rep.evicted_isd[0] == doctest::Approx(0.1));
  CHECK(rep.inserted_isd[0] == doctest::Approx(2.0));
  CHECK(m.contains("q", "new"));
  CHECK_FALSE(m.contains("q", "e1"));
  CHECK(m.entries("q").size() == 4);
}

TEST_CASE("update: a less diverse candidate is refused") {
  MemoryBuffer m(3, 1, 1);
  m.slots("q").entries = {entry("anchor", {0, 0}), entry("far", {0, 3}), entry("mid", {0, 1})};
  MemoryUpdateReport rep;
  const std::vector<std::size_t> anchors{0};
  const std::vector<MemoryEntry> cands{entry("close", {4, 0.5})};
  update_query_memory_with_anchors(m, "q", cands, stored_view, Embedding{1, 0}, anchors, rep);
  CHECK(rep.replaced == 0);
  CHECK(rep.skipped == 1);
  CHECK_FALSE(m.contains("q", "close"));
}

TEST_CASE("update: empty temp memory leaves the buffer alone") {
  MemoryBuffer m(5);
  Rng rng(1);
  reservoir_fill(m, "q", numbered(5), rng);
  const auto before = m.entries("q");
  TempMemory temp;
  const auto rep = update_memory(m, temp, stored_view, {{"q", Embedding{1, 0}}}, rng);
  CHECK(rep.queries == 0);
  REQUIRE(m.entries("q").size() == before.size());
  for (std::size_t i = 0; i < before.size(); ++i) CHECK(m.entries("q")[i].doc_id == before[i].doc_id);
}

TEST_CASE("update: swap guarantee holds on random buffers") {
  Rng rng(77);
  std::size_t swaps = 0;
  for (int trial = 0; trial < 300; ++trial) {
    MemoryBuffer m(12);
    const auto q = testing::random_vec(3, rng);
    std::vector<MemoryEntry> init;
    for (int i = 0; i < 12; ++i) init.push_back(entry("o" + std::to_string(i), testing::random_vec(3, rng, -2, 2)));
    reservoir_fill(m, "q", init, rng);
    TempMemory temp;
    for (int i = 0; i < 6; ++i) temp.add("q", entry("c" + std::to_string(i), testing::random_vec(3, rng, -4, 4)));
    temp.add("q", entry("o3", testing::random_vec(3, rng)));  // already stored
    const auto rep = update_memory(m, temp, stored_view, {{"q", q}}, rng);
    CHECK(rep.guarantee_violations == 0);
    if (!rep.evicted_isd.empty()) {
      CHECK(*std::min_element(rep.inserted_isd.begin(), rep.inserted_isd.end()) >=
            *std::max_element(rep.evicted_isd.begin(), rep.evicted_isd.end()));
    }
    CHECK(rep.replaced <= m.replace_count());
    swaps += rep.replaced;
    CHECK(m.entries("q").size() == 12);
    std::set<DocId> ids;
    for (const auto& e : m.entries("q")) ids.insert(e.doc_id);
    CHECK(ids.size() == 12);
    CHECK(temp.empty());
  }
  CHECK(swaps > 0);
}

TEST_CASE("update fills free slots before swapping") {
  MemoryBuffer m(4, 1, 1);
  Rng rng(9);
  m.slots("q").entries = {entry("a", {0, 0})};
  TempMemory temp;
  for (int i = 0; i < 5; ++i) temp.add("q", entry("c" + std::to_string(i), {0, static_cast<double>(i + 1)}));
  const auto rep = update_memory(m, temp, stored_view, {{"q", Embedding{1, 0}}}, rng);
  CHECK(rep.filled == 3);
  CHECK(m.entries("q").size() == 4);
  // most diverse first
  CHECK(m.contains("q", "c4"));
  CHECK(m.contains("q", "c3"));
  CHECK(m.contains("q", "c2"));
}

TEST_CASE("temp memory drops duplicates") {
  TempMemory t;
  t.add("q", entry("x", {1}));
  t.add("q", entry("x", {2}));
  CHECK(t.size("q") == 1);
  CHECK(t.size("other") == 0);
}

TEST_CASE("snapshot round trip") {
  MemoryBuffer m(5);
  Rng rng(4);
  reservoir_fill(m, "q1", numbered(8), rng);
  reservoir_fill(m, "q2", numbered(2, 50), rng);
  const auto path = testing::scratch_dir("memory") / "m.bin";
  m.save(path);
  const auto back = MemoryBuffer::load(path, [](const DocId&) { return encoder::FeatureVector{{1}, {1.0}}; });
  CHECK(back.capacity() == 5);
  CHECK(back.total_entries() == m.total_entries());
  for (const auto& [q, slots] : m.all()) {
    CHECK(back.all().at(q).seen == slots.seen);
    for (std::size_t i = 0; i < slots.entries.size(); ++i) {
      const auto& e = back.entries(q)[i];
      CHECK(e.doc_id == slots.entries[i].doc_id);
      CHECK(e.embedding == slots.entries[i].embedding);  // small integers survive float32
      CHECK(e.features.nnz() == 1);
    }
  }
}
