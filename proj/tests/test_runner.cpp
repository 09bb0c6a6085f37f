#include <filesystem>
#include <algorithm>
#include <fstream>
#include <numeric>

#include "doctest.h"
#include "l2r/geometry.hpp"
#include "l2r/runner.hpp"
#include "support.hpp"

using namespace l2r;
using namespace l2r::runner;
namespace fs = std::filesystem;

namespace {

const benchmark::SessionStream& tiny_stream() {
  static const auto s = benchmark::generate_synthetic_stream(testing::tiny_generator(), 5);
  return s;
}

}  // namespace

TEST_CASE("method names round trip") {
  for (auto m : all_methods()) CHECK(parse_method(method_name(m)) == m);
  CHECK_THROWS_WITH(parse_method("l2r_magic"), doctest::Contains("l2r_magic"));
  CHECK(traits_of(Method::l2r_rank).align == losses::AlignKind::ranking);
  CHECK(traits_of(Method::l2r_emb).compat);
  CHECK_FALSE(traits_of(Method::l2r_nocompat).compat);
  CHECK_FALSE(traits_of(Method::initial).trains);
  CHECK(traits_of(Method::er_emb).replay);
  CHECK_FALSE(traits_of(Method::er_emb).diverse_selection);
}

TEST_CASE("run config text and validation") {
  RunConfig c;
  c.method = Method::er;
  c.alpha = 0.25;
  c.metrics = {"S@5", "R@100"};
  c.primary_metric = "S@5";
  const auto back = RunConfig::from_text(c.to_text());
  CHECK(back.to_text() == c.to_text());
  CHECK(back.method == Method::er);
  CHECK(back.metrics == c.metrics);
  CHECK(back.run_name() == "er_s1");
  CHECK_THROWS(c.set("unknown_field", "1"));
  CHECK_THROWS(c.set("alpha", "x"));
  RunConfig bad;
  bad.primary_metric = "R@10";
  CHECK_THROWS(bad.validate());
  bad = RunConfig{};
  bad.alpha = 1.5;
  CHECK_THROWS(bad.validate());
  bad = RunConfig{};
  bad.pool_upcoming = 3;
  CHECK_THROWS(bad.validate());
}

TEST_CASE("zero epochs keep the initialization and still index") {
  auto cfg = testing::tiny_run(Method::l2r_rank);
  cfg.epochs_initial = 0;
  const Workspace ws(tiny_stream(), cfg.feature_dim);
  RunState st(cfg);
  const auto init = st.params;
  train_initial_session(st, ws, cfg);
  CHECK(st.params.matrix(0) == init.matrix(0));
  CHECK(st.params.matrix(1) == init.matrix(1));
  CHECK(st.store.size() == tiny_stream().sessions[0].size());
  CHECK(st.memory.total_entries() == 0);
}

TEST_CASE("initial memory holds min(capacity, negatives seen)") {
  auto cfg = testing::tiny_run(Method::l2r_rank);
  cfg.memory_size = 6;
  cfg.epochs_initial = 1;
  cfg.initial_negatives = 4;
  const Workspace ws(tiny_stream(), cfg.feature_dim);
  RunState st(cfg);
  train_initial_session(st, ws, cfg);
  for (const auto& q : ws.train) {
    const auto n = st.memory.entries(q.id).size();
    const auto pool = st.lexical.bm25_topk(q.tokens, cfg.pool_initial, [&](const lexical::InvertedIndex::DocInfo& d) {
      return d.session == 0 && q.exclude.count(d.id) == 0;
    });
    // one epoch draws min(4, |pool|) distinct negatives
    CHECK(n == std::min<std::size_t>(4, pool.size()));
    for (const auto& e : st.memory.entries(q.id)) CHECK(q.exclude.count(e.doc_id) == 0);
  }
}

TEST_CASE("initial training loss goes down") {
  auto g = testing::tiny_generator();
  g.docs_per_domain = 400;
  g.train_queries_per_domain = 100;
  const auto stream = benchmark::generate_synthetic_stream(g, 2);
  auto cfg = testing::tiny_run(Method::l2r_rank);
  cfg.epochs_initial = 6;
  cfg.lr_initial = 0.5;
  cfg.batch_size = 2;
  const Workspace ws(stream, cfg.feature_dim);
  RunState st(cfg);
  train_initial_session(st, ws, cfg);
  const auto& curve = st.reports[0].loss_curve;
  const std::size_t per_epoch = curve.size() / 6;
  REQUIRE(per_epoch >= 40);
  REQUIRE(per_epoch * 6 == curve.size());
  auto mean = [&](std::size_t from, std::size_t n) {
    return std::accumulate(curve.begin() + static_cast<std::ptrdiff_t>(from),
                           curve.begin() + static_cast<std::ptrdiff_t>(from + n), 0.0) /
           static_cast<double>(n);
  };
  // within the first epoch: last quarter below first quarter
  const std::size_t quarter = per_epoch / 4;
  CHECK(mean(per_epoch - quarter, quarter) < mean(0, quarter));
  std::vector<double> epochs;
  for (std::size_t k = 0; k < 6; ++k) epochs.push_back(mean(k * per_epoch, per_epoch));
  std::size_t down = 0;
  for (std::size_t k = 1; k < epochs.size(); ++k) down += epochs[k] < epochs[k - 1] ? 1 : 0;
  CHECK(down >= 4);
  CHECK(epochs.back() < epochs.front());
}

TEST_CASE("initial method leaves parameters alone and extends the index") {
  const auto cfg = testing::tiny_run(Method::initial);
  const Workspace ws(tiny_stream(), cfg.feature_dim);
  RunState st(cfg);
  train_initial_session(st, ws, cfg);
  const auto f0 = st.params;
  run_session(st, ws, 1, cfg);
  CHECK(st.params == f0);
  CHECK(st.store.size() == tiny_stream().docs_through(1));
  CHECK(st.store.embed_op_counter() == tiny_stream().docs_through(1));
}

TEST_CASE("compat methods never rewrite indexed embeddings") {
  for (auto m : {Method::l2r_rank, Method::l2r_emb, Method::l2r_vanilla, Method::er_emb, Method::incre_train_emb}) {
    const auto cfg = testing::tiny_run(m);
    const Workspace ws(tiny_stream(), cfg.feature_dim);
    RunState st(cfg);
    train_initial_session(st, ws, cfg);
    std::vector<std::uint64_t> hashes{st.store.session_hash(0)};
    for (int t = 1; t <= tiny_stream().last_session(); ++t) {
      const auto before = st.params;
      run_session(st, ws, t, cfg);
      CHECK_FALSE(st.params == before);
      for (int s = 0; s < t; ++s) CHECK(st.store.session_hash(s) == hashes[static_cast<std::size_t>(s)]);
      hashes.push_back(st.store.session_hash(t));
      CHECK(st.store.embed_op_counter() == tiny_stream().docs_through(t));
    }
  }
}

TEST_CASE("retrain reinitializes and re-encodes everything") {
  const auto cfg = testing::tiny_run(Method::retrain);
  const Workspace ws(tiny_stream(), cfg.feature_dim);
  RunState st(cfg);
  train_initial_session(st, ws, cfg);
  const auto f0 = st.params;
  const auto ops0 = st.store.embed_op_counter();
  run_session(st, ws, 1, cfg);
  CHECK(st.store.embed_op_counter() - ops0 == tiny_stream().docs_through(1));
  CHECK_FALSE(st.params == f0);
  CHECK(st.reports[1].steps > 0);
}

TEST_CASE("rebuild methods re-encode the whole collection") {
  const auto cfg = testing::tiny_run(Method::l2r_nocompat);
  const Workspace ws(tiny_stream(), cfg.feature_dim);
  RunState st(cfg);
  train_initial_session(st, ws, cfg);
  run_session(st, ws, 1, cfg);
  CHECK(st.store.embed_op_counter() == tiny_stream().docs_through(0) + tiny_stream().docs_through(1));
  CHECK(st.store.record(tiny_stream().sessions[0][0].id).model_version == 1);
}

TEST_CASE("ER never touches PSS or ISD") {
  const auto cfg = testing::tiny_run(Method::er);
  const Workspace ws(tiny_stream(), cfg.feature_dim);
  RunState st(cfg);
  train_initial_session(st, ws, cfg);
  geometry::reset_call_counts();
  run_baseline_er(st, ws, 1, cfg);
  CHECK(geometry::call_counts().pss == 0);
  CHECK(geometry::call_counts().isd == 0);

  const auto l2r = testing::tiny_run(Method::l2r_rank);
  RunState st2(l2r);
  train_initial_session(st2, ws, l2r);
  geometry::reset_call_counts();
  run_session(st2, ws, 1, l2r);
  CHECK(geometry::call_counts().pss > 0);
  CHECK(geometry::call_counts().isd > 0);
}

TEST_CASE("ER is seeded") {
  auto run = [] {
    const auto cfg = testing::tiny_run(Method::er_emb);
    const Workspace ws(tiny_stream(), cfg.feature_dim);
    RunState st(cfg);
    train_initial_session(st, ws, cfg);
    run_session(st, ws, 1, cfg);
    return st;
  };
  const auto a = run();
  const auto b = run();
  CHECK(a.params == b.params);
  CHECK(a.memory.total_entries() == b.memory.total_entries());
  for (const auto& [q, slots] : a.memory.all()) {
    REQUIRE(b.memory.entries(q).size() == slots.entries.size());
    for (std::size_t i = 0; i < slots.entries.size(); ++i) CHECK(b.memory.entries(q)[i].doc_id == slots.entries[i].doc_id);
  }
}

TEST_CASE("sessions must run in order") {
  const auto cfg = testing::tiny_run(Method::l2r_rank);
  const Workspace ws(tiny_stream(), cfg.feature_dim);
  RunState st(cfg);
  train_initial_session(st, ws, cfg);
  CHECK_THROWS(run_session(st, ws, 2, cfg));
  CHECK_THROWS(run_session(st, ws, 0, cfg));
}

TEST_CASE("full runs are deterministic and respect the memory guarantee") {
  const auto cfg = testing::tiny_run(Method::l2r_rank);
  const auto a = run_stream(tiny_stream(), cfg);
  const auto b = run_stream(tiny_stream(), cfg);
  for (const auto& m : cfg.metrics) CHECK(a.perf.at(m).to_csv() == b.perf.at(m).to_csv());
  std::size_t violations = 0, swaps = 0;
  for (const auto& s : a.sessions) {
    violations += s.guarantee_violations;
    swaps += s.memory_replaced + s.memory_filled;
  }
  CHECK(violations == 0);
  CHECK(swaps > 0);
  const auto& p = a.primary(cfg);
  for (int i = 0; i <= p.last_session(); ++i) {
    for (int j = 0; j <= p.last_session(); ++j) {
      CHECK(p.has(i, j));
      CHECK(p.at(i, j) >= 0.0);
      CHECK(p.at(i, j) <= 1.0);
    }
  }
  CHECK(a.dev_perf.size() == static_cast<std::size_t>(p.last_session() + 1));
}

TEST_CASE("without future evaluation only the lower triangle is filled") {
  auto cfg = testing::tiny_run(Method::l2r_emb);
  cfg.evaluate_future = false;
  const auto r = run_stream(tiny_stream(), cfg);
  const auto& p = r.primary(cfg);
  CHECK(p.has(2, 1));
  CHECK_FALSE(p.has(0, 1));
  CHECK_NOTHROW(metrics::average_perf(p));
}

TEST_CASE("a stream without upcoming sessions reports only P_0") {
  // keep D_0 and whatever only refers to it
  auto stream = tiny_stream();
  stream.sessions.resize(1);
  stream.unlabeled.clear();
  const auto in0 = stream.doc_sessions();
  for (auto& [split, qs] : stream.queries) {
    std::erase_if(qs, [](const benchmark::Query& q) { return q.session != 0; });
    auto& rels = stream.qrels[split];
    std::erase_if(rels, [&](const auto& kv) {
      return std::none_of(qs.begin(), qs.end(), [&](const auto& q) { return q.id == kv.first; });
    });
    for (auto& [_, docs] : rels) std::erase_if(docs, [&](const DocId& d) { return in0.count(d) == 0; });
  }
  REQUIRE(stream.last_session() == 0);
  const auto cfg = testing::tiny_run(Method::l2r_rank);
  const auto r = run_stream(stream, cfg);
  const auto s = metrics::lifelong_summary(r.primary(cfg), 0);
  CHECK(s.session_perf.size() == 1);
  CHECK_FALSE(s.ap);
  const auto j = r.summary_json(cfg);
  CHECK(j["metrics"]["R@100"]["AP"].is_null());
}

TEST_CASE("run_and_write lays out the run directory") {
  auto cfg = testing::tiny_run(Method::er_emb);
  cfg.out = testing::scratch_dir("run_out");
  cfg.save_snapshots = true;
  const auto r = run_and_write(tiny_stream(), cfg);
  const fs::path dir = cfg.out / "er_emb_s1";
  for (const char* f : {"config.cfg", "perf_matrix.csv", "summary.json", "cost_report.json"}) {
    CHECK(fs::exists(dir / f));
  }
  for (int t = 0; t <= tiny_stream().last_session(); ++t) {
    CHECK(fs::exists(dir / "memory" / ("session_" + std::to_string(t) + ".bin")));
    const auto ck = dir / "checkpoints" / ("params_session_" + std::to_string(t) + ".bin");
    REQUIRE(fs::exists(ck));
    CHECK(encoder::EncoderParams::load(ck).version_tag == t);
  }
  CHECK(RunConfig::load(dir / "config.cfg").to_text() == cfg.to_text());
  std::ifstream csv(dir / "perf_matrix.csv");
  std::string header;
  std::getline(csv, header);
  CHECK(header == "metric,i,j,value");
  const auto j = nlohmann::json::parse(std::ifstream(dir / "summary.json"));
  CHECK(j["embed_ops"] == r.cost.embed_ops);
}

TEST_CASE("data root resolution") {
  CHECK(resolve_data_root("/some/where") == fs::path("/some/where"));
  ::setenv("L2R_DATA_ROOT", "/from/env", 1);
  CHECK(resolve_data_root("") == fs::path("/from/env"));
  ::unsetenv("L2R_DATA_ROOT");
  CHECK(resolve_data_root("").empty());
}
