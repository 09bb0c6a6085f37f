#include "l2r/runner.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "l2r/selection.hpp"

namespace l2r::runner {

namespace fs = std::filesystem;
using encoder::Tower;

// ---------------------------------------------------------------------------
// methods

namespace {

const std::vector<std::pair<Method, std::string>>& method_table() {
  static const std::vector<std::pair<Method, std::string>> t{
      {Method::l2r_vanilla, "l2r_vanilla"}, {Method::l2r_emb, "l2r_emb"},
      {Method::l2r_rank, "l2r_rank"},       {Method::l2r_nocompat, "l2r_nocompat"},
      {Method::initial, "initial"},         {Method::incre_train, "incre_train"},
      {Method::incre_train_emb, "incre_train_emb"}, {Method::retrain, "retrain"},
      {Method::er, "er"},                   {Method::er_emb, "er_emb"},
  };
  return t;
}

}  // namespace

std::string method_name(Method m) {
  for (const auto& [k, v] : method_table()) {
    if (k == m) return v;
  }
  return "?";
}

Method parse_method(const std::string& name) {
  for (const auto& [k, v] : method_table()) {
    if (v == name) return k;
  }
  throw std::invalid_argument("unknown method: " + name);
}

const std::vector<Method>& all_methods() {
  static const std::vector<Method> all = [] {
    std::vector<Method> v;
    for (const auto& [k, _] : method_table()) v.push_back(k);
    return v;
  }();
  return all;
}

MethodTraits traits_of(Method m) {
  using losses::AlignKind;
  MethodTraits t;
  switch (m) {
    case Method::l2r_vanilla:
      return {true, true, AlignKind::none, true, true, false};
    case Method::l2r_emb:
      return {true, true, AlignKind::embedding, true, true, false};
    case Method::l2r_rank:
      return {true, true, AlignKind::ranking, true, true, false};
    case Method::l2r_nocompat:
      return {true, false, AlignKind::none, true, true, false};
    case Method::initial:
      return {false, true, AlignKind::none, false, false, false};
    case Method::incre_train:
      return {true, false, AlignKind::none, false, false, false};
    case Method::incre_train_emb:
      return {true, true, AlignKind::embedding, false, false, false};
    case Method::retrain:
      return {true, false, AlignKind::none, false, false, true};
    case Method::er:
      return {true, false, AlignKind::none, false, true, false};
    case Method::er_emb:
      return {true, true, AlignKind::embedding, false, true, false};
  }
  return t;
}

// ---------------------------------------------------------------------------
// config

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& key, const std::string& v) {
  std::istringstream in(v);
  T out{};
  in >> out;
  if (!in || !in.eof()) throw std::invalid_argument("run config: " + key + " has a bad value '" + v + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw std::invalid_argument("run config: " + key + " expects true/false, got '" + v + "'");
}

std::string fmt(double v) {
  std::ostringstream out;
  out << std::setprecision(17) << v;
  return out.str();
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream in(v);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

struct ConfigField {
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

#define L2R_NUM(field, type)                                                                \
  ConfigField {                                                                             \
    #field, [](const RunConfig& c) { return fmt(static_cast<double>(c.field)); },           \
        [](RunConfig& c, const std::string& v) { c.field = parse_number<type>(#field, v); } \
  }
#define L2R_BOOL(field)                                                                  \
  ConfigField {                                                                          \
    #field, [](const RunConfig& c) { return std::string(c.field ? "true" : "false"); },  \
        [](RunConfig& c, const std::string& v) { c.field = parse_bool(#field, v); }      \
  }

const std::vector<ConfigField>& config_fields() {
  static const std::vector<ConfigField> fields{
      {"method", [](const RunConfig& c) { return method_name(c.method); },
       [](RunConfig& c, const std::string& v) { c.method = parse_method(v); }},
      {"name", [](const RunConfig& c) { return c.name; }, [](RunConfig& c, const std::string& v) { c.name = v; }},
      L2R_NUM(dim, std::size_t),
      L2R_NUM(feature_dim, std::uint32_t),
      L2R_BOOL(shared_towers),
      L2R_NUM(init_scale, double),
      L2R_NUM(alpha, double),
      L2R_NUM(lambda, double),
      L2R_BOOL(detach_compatible),
      L2R_NUM(memory_size, std::size_t),
      L2R_NUM(n1, std::size_t),
      L2R_NUM(n2, std::size_t),
      L2R_NUM(initial_negatives, std::size_t),
      L2R_NUM(upsample_factor, std::size_t),
      L2R_NUM(lr_initial, double),
      L2R_NUM(lr_upcoming, double),
      L2R_NUM(epochs_initial, int),
      L2R_NUM(epochs_upcoming, int),
      L2R_NUM(batch_size, std::size_t),
      L2R_NUM(bm25_k1, double),
      L2R_NUM(bm25_b, double),
      L2R_NUM(pool_initial, std::size_t),
      L2R_NUM(pool_upcoming, std::size_t),
      {"seed", [](const RunConfig& c) { return std::to_string(c.seed); },
       [](RunConfig& c, const std::string& v) { c.seed = parse_number<std::uint64_t>("seed", v); }},
      {"metrics",
       [](const RunConfig& c) {
         std::string s;
         for (const auto& m : c.metrics) s += (s.empty() ? "" : ",") + m;
         return s;
       },
       [](RunConfig& c, const std::string& v) { c.metrics = split_list(v); }},
      {"primary_metric", [](const RunConfig& c) { return c.primary_metric; },
       [](RunConfig& c, const std::string& v) { c.primary_metric = v; }},
      L2R_BOOL(evaluate_future),
      L2R_NUM(threads, std::size_t),
      {"data", [](const RunConfig& c) { return c.data.string(); },
       [](RunConfig& c, const std::string& v) { c.data = v; }},
      {"out", [](const RunConfig& c) { return c.out.string(); }, [](RunConfig& c, const std::string& v) { c.out = v; }},
      L2R_BOOL(save_snapshots),
  };
  return fields;
}

#undef L2R_NUM
#undef L2R_BOOL

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  for (const auto& f : config_fields()) {
    if (f.key == key) {
      f.set(*this, trim(value));
      return;
    }
  }
  throw std::invalid_argument("run config: unknown key '" + key + "'");
}

std::vector<std::string> RunConfig::keys() {
  std::vector<std::string> out;
  for (const auto& f : config_fields()) out.push_back(f.key);
  return out;
}

std::string RunConfig::to_text() const {
  std::ostringstream out;
  for (const auto& f : config_fields()) out << f.key << '=' << f.get(*this) << '\n';
  return out.str();
}

RunConfig RunConfig::from_text(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("run config line " + std::to_string(lineno) + ": expected key=value");
    cfg.set(trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  return cfg;
}

RunConfig RunConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read run config: " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return from_text(buf.str());
}

std::string RunConfig::run_name() const {
  return name.empty() ? method_name(method) + "_s" + std::to_string(seed) : name;
}

void RunConfig::validate() const {
  auto require = [](bool ok, const std::string& msg) {
    if (!ok) throw std::invalid_argument("run config: " + msg);
  };
  require(dim >= 1, "dim must be >= 1");
  require(feature_dim >= 1, "feature_dim must be >= 1");
  require(std::isfinite(init_scale) && init_scale > 0.0, "init_scale must be positive");
  require(alpha >= 0.0 && alpha <= 1.0, "alpha must lie in [0, 1]");
  require(std::isfinite(lambda) && lambda >= 0.0, "lambda must be finite and >= 0");
  require(memory_size >= 1, "memory_size must be >= 1");
  require(n1 >= 1, "n1 must be >= 1");
  require(initial_negatives >= 1, "initial_negatives must be >= 1");
  require(upsample_factor >= 1, "upsample_factor must be >= 1");
  require(std::isfinite(lr_initial) && lr_initial > 0.0 && std::isfinite(lr_upcoming) && lr_upcoming > 0.0,
          "learning rates must be positive");
  require(epochs_initial >= 0 && epochs_upcoming >= 0, "epochs must be >= 0");
  require(batch_size >= 1, "batch_size must be >= 1");
  require(bm25_k1 >= 0.0 && bm25_b >= 0.0 && bm25_b <= 1.0, "bad BM25 parameters");
  require(pool_initial >= 1 && pool_upcoming >= upsample_factor * n1, "pool sizes too small");
  require(!metrics.empty(), "at least one metric");
  for (const auto& m : metrics) metrics::MetricSpec::parse(m);
  require(std::find(metrics.begin(), metrics.end(), primary_metric) != metrics.end(),
          "primary_metric must be one of metrics");
}

fs::path resolve_data_root(const fs::path& explicit_path) {
  if (!explicit_path.empty()) return explicit_path;
  if (const char* env = std::getenv("L2R_DATA_ROOT"); env != nullptr && *env != '\0') return fs::path(env);
  return {};
}

// ---------------------------------------------------------------------------
// workspace and state

Workspace::Workspace(const benchmark::SessionStream& s, std::uint32_t f) : stream(s), feature_dim(f) {
  for (std::size_t t = 0; t < stream.sessions.size(); ++t) {
    for (const auto& d : stream.sessions[t]) {
      doc_features.emplace(d.id, encoder::featurize(d.tokens, feature_dim));
      doc_session.emplace(d.id, static_cast<int>(t));
      docs.emplace(d.id, &d);
    }
  }
  const auto qrels_it = stream.qrels.find("train");
  for (const auto& q : stream.split("train")) {
    TrainQuery tq;
    tq.id = q.id;
    tq.tokens = q.tokens;
    tq.features = encoder::featurize(q.tokens, feature_dim);
    if (qrels_it != stream.qrels.end()) {
      auto r = qrels_it->second.find(q.id);
      if (r != qrels_it->second.end()) {
        for (const auto& d : r->second) {
          if (doc_session.count(d) != 0 && doc_session.at(d) == 0) tq.positives.push_back(d);
        }
        tq.exclude.insert(r->second.begin(), r->second.end());
      }
    }
    if (tq.positives.empty()) continue;
    train.push_back(std::move(tq));
  }
}

const encoder::FeatureVector& Workspace::features(const DocId& id) const {
  auto it = doc_features.find(id);
  if (it == doc_features.end()) throw std::out_of_range("unknown document " + id);
  return it->second;
}

RunState::RunState(const RunConfig& cfg)
    : params(encoder::EncoderParams::random(cfg.feature_dim, cfg.dim, mix_seed(cfg.seed, 11), cfg.shared_towers, cfg.init_scale)),
      memory(cfg.memory_size),
      store(cfg.dim),
      lexical(lexical::Bm25Params{cfg.bm25_k1, cfg.bm25_b}) {}

nlohmann::json SessionReport::to_json() const {
  return {{"session", session},
          {"steps", steps},
          {"skipped_queries", skipped_queries},
          {"failed_queries", failed_queries},
          {"short_new", short_new},
          {"short_memory", short_memory},
          {"memory_filled", memory_filled},
          {"memory_replaced", memory_replaced},
          {"memory_skipped", memory_skipped},
          {"guarantee_violations", guarantee_violations},
          {"embed_ops", embed_ops},
          {"seconds", seconds},
          {"loss_curve", loss_curve},
          {"errors", errors}};
}

// ---------------------------------------------------------------------------
// training helpers

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

Embedding as_stored(Embedding e) {
  for (double& v : e) v = static_cast<double>(static_cast<float>(v));
  return e;
}

void index_session_lexically(RunState& st, const Workspace& ws, int t) {
  std::vector<std::pair<DocId, std::vector<std::string>>> batch;
  for (const auto& d : ws.stream.sessions[static_cast<std::size_t>(t)]) batch.emplace_back(d.id, d.tokens);
  if (!batch.empty()) st.lexical.add_documents(batch, t);
}

void upsert_store(RunState& st, const Workspace& ws, int t, index_store::StoreMode mode) {
  std::vector<index_store::StoreDoc> docs;
  for (const auto& d : ws.stream.sessions[static_cast<std::size_t>(t)]) docs.push_back({d.id, ws.features(d.id)});
  st.store.upsert_session(t, docs, st.params, mode);
}

void note_error(SessionReport& rep, const QueryId& q, const std::exception& e) {
  ++rep.failed_queries;
  if (rep.errors.size() < 20) rep.errors.push_back(q + ": " + e.what());
}

using InstanceLoss = std::function<losses::LossResult(const losses::TrainingInstance&, const encoder::EncoderParams&)>;

/// Micro-batched SGD: instances are built against the parameters in force
/// at the start of their batch.
class Stepper {
 public:
  Stepper(encoder::EncoderParams& params, InstanceLoss loss, std::size_t batch, double lr, SessionReport& rep)
      : params_(params), loss_(std::move(loss)), batch_(batch), lr_(lr), rep_(rep) {}

  void push(losses::TrainingInstance inst) {
    pending_.push_back(std::move(inst));
    if (pending_.size() >= batch_) flush();
  }

  void flush() {
    if (pending_.empty()) return;
    auto res = losses::mean_over_batch(pending_, params_, loss_);
    encoder::sgd_step(params_, res.gradient, lr_);
    rep_.loss_curve.push_back(res.loss);
    ++rep_.steps;
    pending_.clear();
  }

 private:
  encoder::EncoderParams& params_;
  InstanceLoss loss_;
  std::size_t batch_;
  double lr_;
  SessionReport& rep_;
  std::vector<losses::TrainingInstance> pending_;
};

losses::Candidate live_candidate(const Workspace& ws, const DocId& id) { return {id, ws.features(id), std::nullopt}; }

/// Contrastive training from fixed BM25 pools over sessions [0, last]; used
/// for session 0 and for Retrain. Returns every distinct negative seen per
/// query, in order of first use.
std::map<QueryId, std::vector<DocId>> train_from_scratch(RunState& st, const Workspace& ws, int last,
                                                         const RunConfig& cfg, SessionReport& rep) {
  Rng rng(mix_seed(cfg.seed, 100 + static_cast<std::uint64_t>(last)));
  std::vector<std::vector<DocId>> pools(ws.train.size());
  for (std::size_t i = 0; i < ws.train.size(); ++i) {
    const auto& q = ws.train[i];
    auto hits = st.lexical.bm25_topk(
        q.tokens, cfg.pool_initial,
        [&](const lexical::InvertedIndex::DocInfo& d) { return d.session <= last && q.exclude.count(d.id) == 0; });
    for (auto& h : hits) pools[i].push_back(std::move(h.doc_id));
    if (pools[i].empty()) ++rep.skipped_queries;
  }

  std::map<QueryId, std::vector<DocId>> seen;
  std::map<QueryId, std::set<DocId>> seen_set;
  Stepper stepper(st.params, [](const auto& inst, const auto& p) { return losses::contrastive_loss(inst, p); },
                  cfg.batch_size, cfg.lr_initial, rep);
  std::vector<std::size_t> order(ws.train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (int epoch = 0; epoch < cfg.epochs_initial; ++epoch) {
    rng.shuffle(order);
    for (std::size_t i : order) {
      const auto& q = ws.train[i];
      if (pools[i].empty()) continue;
      losses::TrainingInstance inst;
      inst.mode = losses::TrainMode::no_compat;
      inst.query = q.features;
      inst.positive = live_candidate(ws, q.positives[rng.uniform_index(q.positives.size())]);
      for (std::size_t k : rng.sample_indices(pools[i].size(), cfg.initial_negatives)) {
        const DocId& d = pools[i][k];
        inst.new_negatives.push_back(live_candidate(ws, d));
        if (seen_set[q.id].insert(d).second) seen[q.id].push_back(d);
      }
      stepper.push(std::move(inst));
    }
    stepper.flush();
  }
  return seen;
}

}  // namespace

void train_initial_session(RunState& st, const Workspace& ws, const RunConfig& cfg) {
  const auto start = Clock::now();
  SessionReport rep;
  rep.session = 0;
  index_session_lexically(st, ws, 0);
  const auto negatives = train_from_scratch(st, ws, 0, cfg, rep);
  st.params.version_tag = 0;

  Rng rng(mix_seed(cfg.seed, 200));
  for (const auto& [q, docs] : negatives) {
    std::vector<memory::MemoryEntry> stream;
    for (const auto& d : docs) {
      const auto& x = ws.features(d);
      stream.push_back({d, x, as_stored(encoder::encode(st.params, x, Tower::document)), 0});
    }
    memory::reservoir_fill(st.memory, q, stream, rng);
  }

  const auto before = st.store.embed_op_counter();
  upsert_store(st, ws, 0, traits_of(cfg.method).compat ? index_store::StoreMode::compat : index_store::StoreMode::rebuild);
  rep.embed_ops = st.store.embed_op_counter() - before;
  rep.seconds = seconds_since(start);
  st.session = 0;
  st.reports.push_back(std::move(rep));
}

namespace {

InstanceLoss method_loss(const RunConfig& cfg) {
  const auto tr = traits_of(cfg.method);
  if (!tr.compat) return [](const auto& inst, const auto& p) { return losses::contrastive_loss(inst, p); };
  const losses::LossConfig lc{cfg.lambda, tr.align, cfg.detach_compatible};
  return [lc](const auto& inst, const auto& p) { return losses::total_compat_loss(inst, p, lc); };
}

enum class Selector { diverse, random_replay, random_only };

/// Shared upcoming-session loop for L2R, ER and Incre-train variants.
void train_upcoming(RunState& st, const Workspace& ws, int t, const RunConfig& cfg, Selector selector,
                    SessionReport& rep) {
  const auto tr = traits_of(cfg.method);
  const bool compat = tr.compat;
  Rng rng(mix_seed(cfg.seed, 1000 + static_cast<std::uint64_t>(t)));
  const std::size_t n_new = selector == Selector::random_only ? cfg.n1 + cfg.n2 : cfg.n1;
  const std::size_t n_mem = selector == Selector::random_only ? 0 : cfg.n2;
  selection::SelectionConfig sel_cfg{cfg.alpha, cfg.n1, cfg.pool_upcoming, cfg.upsample_factor};

  auto live_doc = [&](const DocId& d) { return encoder::encode(st.params, ws.features(d), Tower::document); };
  auto entry_view = [&](const memory::MemoryEntry& e) {
    return compat ? e.embedding : encoder::encode(st.params, e.features, Tower::document);
  };

  memory::TempMemory temp;
  Stepper stepper(st.params, method_loss(cfg), cfg.batch_size, cfg.lr_upcoming, rep);
  const auto in_session = [t](const lexical::InvertedIndex::DocInfo& d) { return d.session == t; };
  std::vector<std::size_t> order(ws.train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < cfg.epochs_upcoming; ++epoch) {
    rng.shuffle(order);
    for (std::size_t i : order) {
      const auto& q = ws.train[i];
      try {
        const auto pool = selection::candidate_pool(q.tokens, st.lexical, in_session, q.exclude, cfg.pool_upcoming,
                                                    cfg.upsample_factor * n_new, rng);
        if (pool.empty()) {
          ++rep.skipped_queries;
          continue;
        }
        const DocId& pos = q.positives[rng.uniform_index(q.positives.size())];
        const Embedding qemb = encoder::encode(st.params, q.features, Tower::query);
        std::vector<Embedding> pool_embs;
        pool_embs.reserve(pool.size());
        for (const auto& d : pool) pool_embs.push_back(live_doc(d));

        std::vector<std::size_t> chosen_new;
        if (selector == Selector::diverse) {
          const Embedding pos_emb = compat ? st.store.embedding(pos) : live_doc(pos);
          auto sel = selection::select_new_negatives(pool_embs, pool, qemb, pos_emb, sel_cfg);
          chosen_new = std::move(sel.chosen);
        } else {
          chosen_new = rng.sample_indices(pool.size(), n_new);
        }
        if (chosen_new.size() < n_new) ++rep.short_new;

        losses::TrainingInstance inst;
        inst.mode = compat ? losses::TrainMode::compat : losses::TrainMode::no_compat;
        inst.query = q.features;
        inst.positive = {pos, ws.features(pos), compat ? std::optional<Embedding>(st.store.embedding(pos)) : std::nullopt};
        std::vector<Embedding> new_embs;
        for (std::size_t k : chosen_new) {
          inst.new_negatives.push_back(live_candidate(ws, pool[k]));
          new_embs.push_back(pool_embs[k]);
          if (tr.replay) temp.add(q.id, {pool[k], ws.features(pool[k]), {}, t});
        }

        const auto& entries = st.memory.entries(q.id);
        if (n_mem > 0 && !entries.empty()) {
          memory::MemorySelection ms;
          if (selector == Selector::diverse) {
            std::vector<Embedding> entry_embs;
            entry_embs.reserve(entries.size());
            for (const auto& e : entries) entry_embs.push_back(entry_view(e));
            ms = memory::select_memory_negatives(entries, entry_embs, new_embs, qemb, n_mem);
          } else {
            ms = memory::select_memory_random(entries.size(), n_mem, rng);
          }
          if (ms.short_selection) ++rep.short_memory;
          for (std::size_t k : ms.chosen) {
            const auto& e = entries[k];
            inst.memory_negatives.push_back(
                {e.doc_id, e.features, compat ? std::optional<Embedding>(e.embedding) : std::nullopt});
          }
        }
        stepper.push(std::move(inst));
      } catch (const std::exception& e) {
        note_error(rep, q.id, e);
      }
    }
    stepper.flush();
  }

  if (!tr.replay) return;

  // Candidates carry their embedding under the model that finished the session.
  std::map<QueryId, Embedding> qembs;
  memory::TempMemory fresh;
  for (const auto& [q, items] : temp.all()) {
    for (auto e : items) {
      e.embedding = as_stored(live_doc(e.doc_id));
      fresh.add(q, std::move(e));
    }
  }
  for (const auto& q : ws.train) {
    if (fresh.size(q.id) > 0) qembs.emplace(q.id, encoder::encode(st.params, q.features, Tower::query));
  }
  if (selector == Selector::diverse) {
    Rng mem_rng(mix_seed(cfg.seed, 2000 + static_cast<std::uint64_t>(t)));
    const auto ur = memory::update_memory(st.memory, fresh, entry_view, qembs, mem_rng);
    rep.memory_filled += ur.filled;
    rep.memory_replaced += ur.replaced;
    rep.memory_skipped += ur.skipped;
    rep.guarantee_violations += ur.guarantee_violations;
  } else {
    Rng mem_rng(mix_seed(cfg.seed, 3000 + static_cast<std::uint64_t>(t)));
    for (const auto& [q, items] : fresh.all()) {
      const auto before = st.memory.entries(q).size();
      memory::reservoir_fill(st.memory, q, items, mem_rng);
      rep.memory_filled += st.memory.entries(q).size() - before;
    }
  }
}

void finish_session(RunState& st, const Workspace& ws, int t, const RunConfig& cfg, SessionReport& rep,
                    Clock::time_point start) {
  const auto tr = traits_of(cfg.method);
  if (tr.trains) st.params.version_tag = t;
  const auto before = st.store.embed_op_counter();
  upsert_store(st, ws, t, tr.compat ? index_store::StoreMode::compat : index_store::StoreMode::rebuild);
  rep.embed_ops = st.store.embed_op_counter() - before;
  rep.seconds = seconds_since(start);
  st.session = t;
  st.reports.push_back(std::move(rep));
}

void check_next_session(const RunState& st, const Workspace& ws, int t) {
  if (t != st.session + 1) throw std::logic_error("sessions must run in order");
  if (t < 1 || t > ws.stream.last_session()) throw std::out_of_range("session index out of range");
}

}  // namespace

void run_baseline_er(RunState& st, const Workspace& ws, int t, const RunConfig& cfg) {
  check_next_session(st, ws, t);
  const auto start = Clock::now();
  SessionReport rep;
  rep.session = t;
  index_session_lexically(st, ws, t);
  train_upcoming(st, ws, t, cfg, Selector::random_replay, rep);
  finish_session(st, ws, t, cfg, rep, start);
}

void run_session(RunState& st, const Workspace& ws, int t, const RunConfig& cfg) {
  if (cfg.method == Method::er || cfg.method == Method::er_emb) {
    run_baseline_er(st, ws, t, cfg);
    return;
  }
  check_next_session(st, ws, t);
  const auto start = Clock::now();
  SessionReport rep;
  rep.session = t;
  index_session_lexically(st, ws, t);
  switch (cfg.method) {
    case Method::initial:
      break;
    case Method::retrain:
      st.params = encoder::EncoderParams::random(cfg.feature_dim, cfg.dim, mix_seed(cfg.seed, 11), cfg.shared_towers, cfg.init_scale);
      train_from_scratch(st, ws, t, cfg, rep);
      break;
    case Method::incre_train:
    case Method::incre_train_emb:
      train_upcoming(st, ws, t, cfg, Selector::random_only, rep);
      break;
    default:
      train_upcoming(st, ws, t, cfg, Selector::diverse, rep);
      break;
  }
  finish_session(st, ws, t, cfg, rep, start);
}

// ---------------------------------------------------------------------------
// evaluation

namespace {

struct DenseCollection {
  std::size_t dim = 0;
  std::vector<DocId> ids;
  std::vector<int> sessions;
  std::vector<float> vectors;
};

/// Index contents after session i, plus documents of later sessions encoded
/// on the fly with the current model (they are not indexed yet).
DenseCollection collection_after(const RunState& st, const Workspace& ws, int i, int last) {
  DenseCollection c;
  c.dim = st.params.dim();
  for (const auto& [id, rec] : st.store.records()) {
    c.ids.push_back(id);
    c.sessions.push_back(rec.session_added);
    c.vectors.insert(c.vectors.end(), rec.embedding.begin(), rec.embedding.end());
  }
  for (int t = i + 1; t <= last; ++t) {
    for (const auto& d : ws.stream.sessions[static_cast<std::size_t>(t)]) {
      const auto e = encoder::encode(st.params, ws.features(d.id), Tower::document);
      c.ids.push_back(d.id);
      c.sessions.push_back(t);
      for (double v : e) c.vectors.push_back(static_cast<float>(v));
    }
  }
  return c;
}

// Eight independent partial sums so the loop vectorizes without fast-math.
double dot_f32(const float* a, const float* b, std::size_t n) {
  float acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    for (int k = 0; k < 8; ++k) acc[k] += a[i + k] * b[i + k];
  }
  for (; i < n; ++i) acc[i % 8] += a[i] * b[i];
  return (static_cast<double>(acc[0]) + acc[1] + acc[2] + acc[3]) + (static_cast<double>(acc[4]) + acc[5] + acc[6] + acc[7]);
}

std::size_t thread_count(const RunConfig& cfg) {
  if (cfg.threads > 0) return cfg.threads;
  const auto hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : hw;
}

template <class Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += threads) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

/// Macro-averaged metrics of the given split's session-j queries; nullopt
/// when no query has a relevant document within D_{0:j}.
std::optional<std::vector<double>> evaluate_cell(const RunState& st, const Workspace& ws, const DenseCollection& c,
                                                 const std::string& split, int j,
                                                 const std::vector<metrics::MetricSpec>& specs, std::size_t threads) {
  struct Job {
    const benchmark::Query* query;
    std::set<DocId> relevant;
  };
  std::vector<Job> jobs;
  const auto qrels_it = ws.stream.qrels.find(split);
  if (qrels_it == ws.stream.qrels.end()) return std::nullopt;
  for (const auto& q : ws.stream.split(split)) {
    if (q.session != j) continue;
    auto r = qrels_it->second.find(q.id);
    if (r == qrels_it->second.end()) continue;
    Job job{&q, {}};
    for (const auto& d : r->second) {
      auto s = ws.doc_session.find(d);
      if (s != ws.doc_session.end() && s->second <= j) job.relevant.insert(d);
    }
    if (!job.relevant.empty()) jobs.push_back(std::move(job));
  }
  if (jobs.empty()) return std::nullopt;

  std::size_t depth = 1;
  for (const auto& s : specs) depth = std::max(depth, s.cutoff);
  std::vector<std::size_t> members;
  for (std::size_t k = 0; k < c.ids.size(); ++k) {
    if (c.sessions[k] <= j) members.push_back(k);
  }

  std::vector<std::vector<double>> per_query(jobs.size());
  parallel_for(jobs.size(), threads, [&](std::size_t qi) {
    const auto qx = encoder::featurize(jobs[qi].query->tokens, ws.feature_dim);
    const Embedding qe = encoder::encode(st.params, qx, Tower::query);
    std::vector<float> qf(qe.begin(), qe.end());
    std::vector<std::pair<double, std::size_t>> scored;
    scored.reserve(members.size());
    for (std::size_t k : members) scored.emplace_back(dot_f32(qf.data(), &c.vectors[k * c.dim], c.dim), k);
    const std::size_t keep = std::min(depth, scored.size());
    auto before = [&](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return c.ids[a.second] < c.ids[b.second];
    };
    if (keep < scored.size()) std::nth_element(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(keep), scored.end(), before);
    std::sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(keep), before);
    std::vector<DocId> ranking;
    ranking.reserve(keep);
    for (std::size_t r = 0; r < keep; ++r) ranking.push_back(c.ids[scored[r].second]);
    for (const auto& s : specs) per_query[qi].push_back(metrics::rank_metric(s.kind, s.cutoff, ranking, jobs[qi].relevant));
  });

  std::vector<double> mean(specs.size(), 0.0);
  for (const auto& v : per_query) {
    for (std::size_t m = 0; m < specs.size(); ++m) mean[m] += v[m];
  }
  for (double& m : mean) m /= static_cast<double>(jobs.size());
  return mean;
}

}  // namespace

void evaluate_after_session(const RunState& st, const Workspace& ws, int i, const RunConfig& cfg, RunResult& result) {
  const int T = ws.stream.last_session();
  const int last = cfg.evaluate_future ? T : i;
  std::vector<metrics::MetricSpec> specs;
  for (const auto& m : cfg.metrics) specs.push_back(metrics::MetricSpec::parse(m));
  const auto threads = thread_count(cfg);
  const DenseCollection c = collection_after(st, ws, i, last);
  for (int j = 0; j <= last; ++j) {
    const auto values = evaluate_cell(st, ws, c, "test", j, specs, threads);
    if (!values) continue;
    for (std::size_t m = 0; m < specs.size(); ++m) result.perf.at(cfg.metrics[m]).set(i, j, (*values)[m]);
  }
  std::vector<metrics::MetricSpec> primary{metrics::MetricSpec::parse(cfg.primary_metric)};
  const auto dev = evaluate_cell(st, ws, c, "dev", i, primary, threads);
  result.dev_perf.push_back(dev ? dev->front() : std::nan(""));
}

RunResult run_stream(const benchmark::SessionStream& stream, const RunConfig& cfg, const SessionObserver& observer) {
  cfg.validate();
  const auto start = Clock::now();
  const Workspace ws(stream, cfg.feature_dim);
  RunState st(cfg);
  RunResult result;
  const int T = stream.last_session();
  for (const auto& m : cfg.metrics) result.perf.emplace(m, metrics::PerfMatrix(T, m));

  train_initial_session(st, ws, cfg);
  evaluate_after_session(st, ws, 0, cfg, result);
  if (observer) observer(0, st);
  for (int t = 1; t <= T; ++t) {
    run_session(st, ws, t, cfg);
    evaluate_after_session(st, ws, t, cfg, result);
    if (observer) observer(t, st);
  }
  result.cost = st.store.cost_report();
  result.sessions = st.reports;
  result.seconds = seconds_since(start);
  return result;
}

nlohmann::json RunResult::summary_json(const RunConfig& cfg) const {
  nlohmann::json j;
  j["method"] = method_name(cfg.method);
  j["seed"] = cfg.seed;
  j["primary_metric"] = cfg.primary_metric;
  nlohmann::json by_metric = nlohmann::json::object();
  for (const auto& [name, m] : perf) {
    nlohmann::json s;
    try {
      s = metrics::lifelong_summary(m, m.last_session()).to_json();
    } catch (const std::exception& e) {
      s = {{"error", e.what()}};
    }
    by_metric[name] = s;
  }
  j["metrics"] = by_metric;
  nlohmann::json dev = nlohmann::json::array();
  for (double v : dev_perf) dev.push_back(std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v));
  j["dev"] = dev;
  nlohmann::json sessions = nlohmann::json::array();
  std::size_t violations = 0;
  for (const auto& s : this->sessions) {
    sessions.push_back(s.to_json());
    violations += s.guarantee_violations;
  }
  j["sessions"] = sessions;
  j["memory_guarantee_violations"] = violations;
  j["embed_ops"] = cost.embed_ops;
  j["seconds"] = seconds;
  return j;
}

RunResult run_and_write(const benchmark::SessionStream& stream, const RunConfig& cfg) {
  const fs::path dir = cfg.out / cfg.run_name();
  fs::create_directories(dir);
  if (cfg.save_snapshots) {
    fs::create_directories(dir / "memory");
    fs::create_directories(dir / "checkpoints");
  }
  auto observer = [&](int t, const RunState& st) {
    if (!cfg.save_snapshots) return;
    st.memory.save(dir / "memory" / ("session_" + std::to_string(t) + ".bin"));
    st.params.save(dir / "checkpoints" / ("params_session_" + std::to_string(t) + ".bin"));
  };
  RunResult result = run_stream(stream, cfg, observer);

  {
    std::ofstream out(dir / "config.cfg");
    out << cfg.to_text();
  }
  {
    std::ofstream out(dir / "perf_matrix.csv");
    out << "metric,i,j,value\n";
    for (const auto& m : cfg.metrics) out << result.perf.at(m).to_csv(false);
  }
  {
    std::ofstream out(dir / "summary.json");
    out << result.summary_json(cfg).dump(2) << '\n';
  }
  {
    std::ofstream out(dir / "cost_report.json");
    out << result.cost.to_json().dump(2) << '\n';
  }
  return result;
}

}  // namespace l2r::runner
