#include "l2r/benchmark.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include "l2r/lexical.hpp"

namespace l2r::benchmark {

namespace fs = std::filesystem;

std::size_t SessionStream::docs_through(int t) const {
  std::size_t n = 0;
  for (int s = 0; s <= t && s < static_cast<int>(sessions.size()); ++s) n += sessions[static_cast<std::size_t>(s)].size();
  return n;
}

const std::vector<Query>& SessionStream::split(const std::string& name) const {
  static const std::vector<Query> none;
  auto it = queries.find(name);
  return it == queries.end() ? none : it->second;
}

std::map<DocId, int> SessionStream::doc_sessions() const {
  std::map<DocId, int> out;
  for (std::size_t s = 0; s < sessions.size(); ++s) {
    for (const auto& d : sessions[s]) out.emplace(d.id, static_cast<int>(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// generator config

namespace {

struct Field {
  std::function<std::string(const GeneratorConfig&)> get;
  std::function<void(GeneratorConfig&, const std::string&)> set;
};

std::string fmt_double(double v) {
  std::ostringstream out;
  out << std::setprecision(17) << v;
  return out.str();
}

int parse_int(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  int out = 0;
  try {
    out = std::stoi(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) throw std::invalid_argument("generator config: " + key + " expects an integer, got '" + v + "'");
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double out = 0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) throw std::invalid_argument("generator config: " + key + " expects a number, got '" + v + "'");
  return out;
}

const std::vector<std::pair<std::string, Field>>& fields() {
#define L2R_INT(name)                                                                        \
  {                                                                                          \
    #name, Field {                                                                           \
      [](const GeneratorConfig& c) { return std::to_string(c.name); },                       \
          [](GeneratorConfig& c, const std::string& v) { c.name = parse_int(#name, v); }     \
    }                                                                                        \
  }
#define L2R_DBL(name)                                                                        \
  {                                                                                          \
    #name, Field {                                                                           \
      [](const GeneratorConfig& c) { return fmt_double(c.name); },                           \
          [](GeneratorConfig& c, const std::string& v) { c.name = parse_double(#name, v); }  \
    }                                                                                        \
  }
  static const std::vector<std::pair<std::string, Field>> all{
      L2R_INT(domains),
      L2R_INT(common_domains),
      L2R_INT(docs_per_domain),
      L2R_DBL(initial_common_frac),
      L2R_DBL(initial_booming_frac),
      L2R_DBL(session_common_frac),
      L2R_DBL(session_booming_frac),
      L2R_DBL(session_other_frac),
      L2R_INT(topics_per_domain),
      L2R_INT(novel_topics_per_domain),
      L2R_INT(terms_per_topic),
      L2R_INT(domain_terms),
      L2R_INT(background_terms),
      L2R_INT(key_terms_per_doc),
      L2R_DBL(background_rate),
      L2R_DBL(key_rate),
      L2R_DBL(topic_rate),
      L2R_INT(doc_len_min),
      L2R_INT(doc_len_max),
      L2R_INT(query_len_min),
      L2R_INT(query_len_max),
      L2R_DBL(query_key_rate),
      L2R_DBL(query_synonym_prob),
      L2R_INT(train_queries_per_domain),
      L2R_INT(dev_queries_per_session),
      L2R_INT(test_queries_per_session),
      L2R_INT(test_extra_relevant),
      L2R_INT(paraphrases_per_query),
      L2R_DBL(paraphrase_dropout),
      L2R_DBL(synonym_rate),
      L2R_DBL(synonym_sub_prob),
  };
#undef L2R_INT
#undef L2R_DBL
  return all;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument("generator config: " + msg);
}

bool is_probability(double p) { return std::isfinite(p) && p >= 0.0 && p <= 1.0; }

}  // namespace

void GeneratorConfig::set(const std::string& key, const std::string& value) {
  for (const auto& [name, field] : fields()) {
    if (name == key) {
      field.set(*this, trim(value));
      return;
    }
  }
  throw std::invalid_argument("generator config: unknown key '" + key + "'");
}

std::vector<std::string> GeneratorConfig::keys() {
  std::vector<std::string> out;
  for (const auto& [name, _] : fields()) out.push_back(name);
  return out;
}

std::string GeneratorConfig::to_text() const {
  std::ostringstream out;
  for (const auto& [name, field] : fields()) out << name << '=' << field.get(*this) << '\n';
  return out.str();
}

GeneratorConfig GeneratorConfig::from_text(const std::string& text) {
  GeneratorConfig cfg;
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
    if (eq == std::string::npos) {
      throw std::invalid_argument("generator config line " + std::to_string(lineno) + ": expected key=value");
    }
    cfg.set(trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  cfg.validate();
  return cfg;
}

GeneratorConfig GeneratorConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read generator config: " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return from_text(buf.str());
}

void GeneratorConfig::save(const fs::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write generator config: " + path.string());
  out << to_text();
}

void GeneratorConfig::validate() const {
  require(common_domains >= 0, "common_domains must be >= 0");
  require(domains - common_domains >= 1, "need at least one booming domain");
  require(docs_per_domain >= 1, "docs_per_domain must be >= 1");
  for (double f : {initial_common_frac, initial_booming_frac, session_common_frac, session_booming_frac,
                   session_other_frac, background_rate, key_rate, topic_rate, query_key_rate, query_synonym_prob, paraphrase_dropout,
                   synonym_rate, synonym_sub_prob}) {
    require(is_probability(f), "rates and fractions must lie in [0, 1]");
  }
  require(background_rate + key_rate + topic_rate <= 1.0 + 1e-12, "background_rate + key_rate + topic_rate > 1");
  require(topics_per_domain >= 1 && terms_per_topic >= 1, "topics_per_domain and terms_per_topic must be >= 1");
  require(novel_topics_per_domain >= 0 && novel_topics_per_domain < topics_per_domain,
          "novel_topics_per_domain must be in [0, topics_per_domain)");
  require(domain_terms >= 1 && background_terms >= 1, "domain_terms and background_terms must be >= 1");
  require(key_terms_per_doc >= 1 && key_terms_per_doc <= terms_per_topic, "key_terms_per_doc must be in [1, terms_per_topic]");
  require(doc_len_min >= 1 && doc_len_max >= doc_len_min, "bad document length range");
  require(query_len_min >= 1 && query_len_max >= query_len_min, "bad query length range");
  require(train_queries_per_domain >= 0 && dev_queries_per_session >= 0 && test_queries_per_session >= 0,
          "query counts must be >= 0");
  require(test_extra_relevant >= 0 && paraphrases_per_query >= 0, "paraphrase counts must be >= 0");
}

std::vector<std::vector<int>> session_counts(const GeneratorConfig& cfg) {
  cfg.validate();
  const int T = cfg.upcoming_sessions();
  const int D = cfg.domains;
  std::vector<std::vector<int>> counts(static_cast<std::size_t>(T + 1), std::vector<int>(static_cast<std::size_t>(D), 0));
  std::vector<std::string> deficits;
  for (int d = 0; d < D; ++d) {
    const bool common = d < cfg.common_domains;
    const int boom_session = common ? -1 : d - cfg.common_domains + 1;
    double total = common ? cfg.initial_common_frac : cfg.initial_booming_frac;
    int upcoming = 0;
    for (int t = 1; t <= T; ++t) {
      double f = cfg.session_other_frac;
      if (common) f = cfg.session_common_frac;
      if (t == boom_session) f = cfg.session_booming_frac;
      total += f;
      const int n = static_cast<int>(std::floor(f * cfg.docs_per_domain + 1e-9));
      counts[static_cast<std::size_t>(t)][static_cast<std::size_t>(d)] = n;
      upcoming += n;
    }
    if (total > 1.0 + 1e-9) {
      std::ostringstream msg;
      msg << "domain " << d << " needs " << std::setprecision(4) << total * 100.0 << "% of its documents (deficit "
          << (total - 1.0) * cfg.docs_per_domain << " docs)";
      deficits.push_back(msg.str());
      continue;
    }
    // Session 0 absorbs rounding and any unassigned remainder.
    counts[0][static_cast<std::size_t>(d)] = cfg.docs_per_domain - upcoming;
  }
  if (!deficits.empty()) {
    std::string msg = "session ratios exceed available documents:";
    for (const auto& s : deficits) msg += "\n  " + s;
    throw std::invalid_argument(msg);
  }
  return counts;
}

// ---------------------------------------------------------------------------
// synthetic generator

std::vector<std::string> paraphrase(const std::vector<std::string>& tokens,
                                    const std::map<std::string, std::string>& synonyms, double dropout,
                                    double substitute, Rng& rng) {
  std::vector<std::string> out;
  out.reserve(tokens.size());
  for (const auto& tok : tokens) {
    if (rng.bernoulli(dropout)) continue;
    auto syn = synonyms.find(tok);
    if (syn != synonyms.end() && rng.bernoulli(substitute)) {
      out.push_back(syn->second);
    } else {
      out.push_back(tok);
    }
  }
  if (out.empty() && !tokens.empty()) out.push_back(tokens.front());
  return out;
}

namespace {

std::string pad(char prefix, std::size_t n, int width) {
  std::ostringstream out;
  out << prefix << std::setw(width) << std::setfill('0') << n;
  return out.str();
}

struct Vocabulary {
  // topics[d][z] = term list; domain_terms[d]; background
  std::vector<std::vector<std::vector<std::string>>> topics;
  std::vector<std::vector<std::string>> domain_terms;
  std::vector<std::string> background;
  std::map<std::string, std::string> synonyms;
};

Vocabulary build_vocabulary(const GeneratorConfig& cfg, Rng& rng) {
  Vocabulary v;
  for (int b = 0; b < cfg.background_terms; ++b) v.background.push_back("bg" + std::to_string(b));
  v.topics.resize(static_cast<std::size_t>(cfg.domains));
  v.domain_terms.resize(static_cast<std::size_t>(cfg.domains));
  for (int d = 0; d < cfg.domains; ++d) {
    const std::string dom = "x" + std::to_string(d);
    for (int z = 0; z < cfg.topics_per_domain; ++z) {
      std::vector<std::string> terms;
      for (int k = 0; k < cfg.terms_per_topic; ++k) {
        const std::string term = dom + "t" + std::to_string(z) + "w" + std::to_string(k);
        if (rng.bernoulli(cfg.synonym_rate)) v.synonyms.emplace(term, term + "s");
        terms.push_back(term);
      }
      v.topics[static_cast<std::size_t>(d)].push_back(std::move(terms));
    }
    for (int k = 0; k < cfg.domain_terms; ++k) v.domain_terms[static_cast<std::size_t>(d)].push_back(dom + "g" + std::to_string(k));
  }
  return v;
}

struct DocSeed {
  int domain = 0;
  int topic = 0;
  std::vector<std::string> keys;
  std::vector<std::string> tokens;
};

template <class T>
const T& pick(const std::vector<T>& v, Rng& rng) {
  return v[rng.uniform_index(v.size())];
}

int uniform_int(int lo, int hi, Rng& rng) { return lo + static_cast<int>(rng.uniform_index(static_cast<std::size_t>(hi - lo + 1))); }

DocSeed make_doc(const GeneratorConfig& cfg, const Vocabulary& v, int domain, bool allow_novel, Rng& rng) {
  DocSeed doc;
  doc.domain = domain;
  const int usable = allow_novel ? cfg.topics_per_domain : cfg.topics_per_domain - cfg.novel_topics_per_domain;
  doc.topic = static_cast<int>(rng.uniform_index(static_cast<std::size_t>(usable)));
  const auto& topic = v.topics[static_cast<std::size_t>(domain)][static_cast<std::size_t>(doc.topic)];
  for (std::size_t i : rng.sample_indices(topic.size(), static_cast<std::size_t>(cfg.key_terms_per_doc))) {
    doc.keys.push_back(topic[i]);
  }
  const int len = uniform_int(cfg.doc_len_min, cfg.doc_len_max, rng);
  for (int i = 0; i < len; ++i) {
    const double u = rng.uniform_real();
    if (u < cfg.background_rate) {
      doc.tokens.push_back(pick(v.background, rng));
    } else if (u < cfg.background_rate + cfg.key_rate) {
      doc.tokens.push_back(pick(doc.keys, rng));
    } else if (u < cfg.background_rate + cfg.key_rate + cfg.topic_rate) {
      doc.tokens.push_back(pick(topic, rng));
    } else {
      doc.tokens.push_back(pick(v.domain_terms[static_cast<std::size_t>(domain)], rng));
    }
  }
  return doc;
}

std::vector<std::string> make_query(const GeneratorConfig& cfg, const Vocabulary& v, const DocSeed& doc, Rng& rng) {
  const auto& topic = v.topics[static_cast<std::size_t>(doc.domain)][static_cast<std::size_t>(doc.topic)];
  const int len = uniform_int(cfg.query_len_min, cfg.query_len_max, rng);
  std::vector<std::string> q;
  for (int i = 0; i < len; ++i) {
    const auto& term = rng.bernoulli(cfg.query_key_rate) ? pick(doc.keys, rng) : pick(topic, rng);
    auto syn = v.synonyms.find(term);
    q.push_back(syn != v.synonyms.end() && rng.bernoulli(cfg.query_synonym_prob) ? syn->second : term);
  }
  return q;
}

// Session drawn with probability proportional to this domain's later-session counts.
int draw_later_session(const std::vector<std::vector<int>>& counts, int domain, Rng& rng) {
  double total = 0.0;
  for (std::size_t t = 1; t < counts.size(); ++t) total += counts[t][static_cast<std::size_t>(domain)];
  if (total <= 0.0) return 1 + static_cast<int>(rng.uniform_index(counts.size() - 1));
  double u = rng.uniform_real() * total;
  for (std::size_t t = 1; t < counts.size(); ++t) {
    u -= counts[t][static_cast<std::size_t>(domain)];
    if (u < 0.0) return static_cast<int>(t);
  }
  return static_cast<int>(counts.size()) - 1;
}

}  // namespace

SessionStream generate_synthetic_stream(const GeneratorConfig& cfg, std::uint64_t seed) {
  const auto counts = session_counts(cfg);
  const int T = cfg.upcoming_sessions();
  Rng vocab_rng(mix_seed(seed, 1));
  Rng doc_rng(mix_seed(seed, 2));
  Rng query_rng(mix_seed(seed, 3));
  const Vocabulary vocab = build_vocabulary(cfg, vocab_rng);

  // Base documents per session, then paraphrases appended where they land.
  std::vector<std::vector<DocSeed>> seeds(static_cast<std::size_t>(T + 1));
  for (int t = 0; t <= T; ++t) {
    for (int d = 0; d < cfg.domains; ++d) {
      for (int i = 0; i < counts[static_cast<std::size_t>(t)][static_cast<std::size_t>(d)]; ++i) {
        seeds[static_cast<std::size_t>(t)].push_back(make_doc(cfg, vocab, d, t > 0, doc_rng));
      }
    }
    doc_rng.shuffle(seeds[static_cast<std::size_t>(t)]);
  }

  SessionStream stream;
  for (int d = 0; d < cfg.domains; ++d) stream.domains.push_back("x" + std::to_string(d));
  for (const auto& s : split_names()) {
    stream.queries[s];
    stream.qrels[s];
  }

  struct Extra {
    int session;
    DocSeed doc;
    QueryId owner;
    std::string split;
  };
  std::vector<Extra> extras;

  auto emit_query = [&](const std::string& split, int session, const DocSeed& target, std::size_t target_pos) {
    auto& list = stream.queries[split];
    Query q;
    q.id = pad(split[0], list.size(), 6);
    q.session = session;
    q.domain = stream.domains[static_cast<std::size_t>(target.domain)];
    q.tokens = make_query(cfg, vocab, target, query_rng);
    list.push_back(q);
    return std::make_pair(q.id, target_pos);
  };

  // Training queries target session-0 documents, a fixed number per domain.
  std::vector<std::pair<QueryId, std::size_t>> train_targets;
  std::vector<bool> used0(seeds[0].size(), false);
  for (int d = 0; d < cfg.domains; ++d) {
    std::vector<std::size_t> pool;
    for (std::size_t i = 0; i < seeds[0].size(); ++i) {
      if (seeds[0][i].domain == d) pool.push_back(i);
    }
    const auto n = std::min(pool.size(), static_cast<std::size_t>(cfg.train_queries_per_domain));
    for (std::size_t k : query_rng.sample_indices(pool.size(), n)) {
      used0[pool[k]] = true;
      train_targets.push_back(emit_query("train", 0, seeds[0][pool[k]], pool[k]));
    }
  }
  for (const auto& [qid, pos] : train_targets) {
    const auto& target = seeds[0][pos];
    for (int p = 0; p < cfg.paraphrases_per_query; ++p) {
      DocSeed para = target;
      para.tokens = paraphrase(target.tokens, vocab.synonyms, cfg.paraphrase_dropout, cfg.synonym_sub_prob, query_rng);
      const int s = T >= 1 ? draw_later_session(counts, target.domain, query_rng) : 0;
      extras.push_back({s, std::move(para), qid, "unlabeled"});
    }
  }

  // Dev and test queries per session target that session's base documents.
  std::vector<std::pair<QueryId, std::pair<int, std::size_t>>> eval_targets[2];
  for (int t = 0; t <= T; ++t) {
    const auto& docs = seeds[static_cast<std::size_t>(t)];
    std::vector<std::size_t> pool;
    for (std::size_t i = 0; i < docs.size(); ++i) {
      if (t > 0 || !used0[i]) pool.push_back(i);
    }
    const int want[2] = {cfg.dev_queries_per_session, cfg.test_queries_per_session};
    const auto n = std::min(pool.size(), static_cast<std::size_t>(want[0] + want[1]));
    const auto chosen = query_rng.sample_indices(pool.size(), n);
    for (std::size_t k = 0; k < chosen.size(); ++k) {
      const int which = k < static_cast<std::size_t>(std::min<std::size_t>(want[0], n)) ? 0 : 1;
      const std::string split = which == 0 ? "dev" : "test";
      const std::size_t pos = pool[chosen[k]];
      auto [qid, _] = emit_query(split, t, docs[pos], pos);
      eval_targets[which].push_back({qid, {t, pos}});
      for (int p = 0; p < cfg.test_extra_relevant; ++p) {
        DocSeed para = docs[pos];
        para.tokens = paraphrase(docs[pos].tokens, vocab.synonyms, cfg.paraphrase_dropout, cfg.synonym_sub_prob, query_rng);
        extras.push_back({t, std::move(para), qid, split});
      }
    }
  }

  // Assign ids: base documents in session order, then extras in creation order.
  stream.sessions.resize(static_cast<std::size_t>(T + 1));
  std::size_t next_id = 0;
  std::vector<std::vector<DocId>> base_ids(static_cast<std::size_t>(T + 1));
  for (int t = 0; t <= T; ++t) {
    for (const auto& s : seeds[static_cast<std::size_t>(t)]) {
      const DocId id = pad('d', next_id++, 7);
      base_ids[static_cast<std::size_t>(t)].push_back(id);
      stream.sessions[static_cast<std::size_t>(t)].push_back({id, stream.domains[static_cast<std::size_t>(s.domain)], s.tokens});
    }
  }
  for (const auto& [qid, pos] : train_targets) stream.qrels["train"][qid].insert(base_ids[0][pos]);
  for (int which = 0; which < 2; ++which) {
    const std::string split = which == 0 ? "dev" : "test";
    for (const auto& [qid, at] : eval_targets[which]) {
      stream.qrels[split][qid].insert(base_ids[static_cast<std::size_t>(at.first)][at.second]);
    }
  }
  for (auto& e : extras) {
    const DocId id = pad('d', next_id++, 7);
    stream.sessions[static_cast<std::size_t>(e.session)].push_back(
        {id, stream.domains[static_cast<std::size_t>(e.doc.domain)], std::move(e.doc.tokens)});
    if (e.split == "unlabeled") {
      stream.unlabeled[e.owner].insert(id);
    } else {
      stream.qrels[e.split][e.owner].insert(id);
    }
  }
  return stream;
}

// ---------------------------------------------------------------------------
// files

namespace {

std::string join(const std::vector<std::string>& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto tab = line.find('\t', start);
    out.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return out;
}

std::ofstream open_out(const fs::path& p) {
  fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  return out;
}

void write_qrels(const QRels& qrels, const fs::path& p) {
  auto out = open_out(p);
  for (const auto& [qid, docs] : qrels) {
    for (const auto& d : docs) out << qid << " 0 " << d << " 1\n";
  }
}

[[noreturn]] void malformed(const fs::path& p, int lineno, const std::string& what) {
  throw std::runtime_error("malformed line " + std::to_string(lineno) + " in " + p.string() + ": " + what);
}

template <class Fn>
void for_lines(const fs::path& p, Fn fn) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    fn(line, lineno);
  }
}

QRels read_qrels(const fs::path& p) {
  QRels out;
  for_lines(p, [&](const std::string& line, int lineno) {
    std::istringstream in(line);
    std::string qid, zero, doc, rel, extra;
    if (!(in >> qid >> zero >> doc >> rel) || (in >> extra)) malformed(p, lineno, "expected 'query_id 0 doc_id relevance'");
    int r = 0;
    try {
      r = std::stoi(rel);
    } catch (const std::exception&) {
      malformed(p, lineno, "relevance must be an integer");
    }
    if (r > 0) out[qid].insert(doc);
  });
  return out;
}

}  // namespace

void write_stream(const SessionStream& stream, const fs::path& root, const GeneratorConfig* generator) {
  fs::create_directories(root);
  if (generator) generator->save(root / "generator.cfg");
  for (std::size_t t = 0; t < stream.sessions.size(); ++t) {
    auto out = open_out(root / "sessions" / ("s" + std::to_string(t)) / "corpus.tsv");
    for (const auto& d : stream.sessions[t]) out << d.id << '\t' << d.domain << '\t' << join(d.tokens) << '\n';
  }
  for (const auto& split : split_names()) {
    auto out = open_out(root / "queries" / (split + ".tsv"));
    for (const auto& q : stream.split(split)) out << q.id << '\t' << q.session << '\t' << q.domain << '\t' << join(q.tokens) << '\n';
    auto it = stream.qrels.find(split);
    write_qrels(it == stream.qrels.end() ? QRels{} : it->second, root / "qrels" / (split + ".txt"));
  }
  if (!stream.unlabeled.empty()) write_qrels(stream.unlabeled, root / "qrels" / "unlabeled.txt");
}

SessionStream load_external_stream(const fs::path& root) {
  if (!fs::is_directory(root / "sessions")) throw std::runtime_error("no sessions/ directory under " + root.string());
  SessionStream stream;
  std::set<std::string> domains;
  std::set<DocId> seen;
  for (int t = 0;; ++t) {
    const fs::path dir = root / "sessions" / ("s" + std::to_string(t));
    if (!fs::is_directory(dir)) break;
    const fs::path p = dir / "corpus.tsv";
    auto& docs = stream.sessions.emplace_back();
    for_lines(p, [&](const std::string& line, int lineno) {
      const auto cols = split_tabs(line);
      if (cols.size() != 3) malformed(p, lineno, "expected doc_id<TAB>domain<TAB>text");
      if (cols[0].empty()) malformed(p, lineno, "empty doc_id");
      if (!seen.insert(cols[0]).second) malformed(p, lineno, "duplicate doc_id " + cols[0]);
      auto tokens = lexical::tokenize(cols[2]);
      if (tokens.empty()) malformed(p, lineno, "document has no tokens");
      domains.insert(cols[1]);
      docs.push_back({cols[0], cols[1], std::move(tokens)});
    });
    if (docs.empty()) stream.warnings.push_back("session " + std::to_string(t) + " has no documents");
  }
  if (stream.sessions.empty()) throw std::runtime_error("no sessions/s0 under " + root.string());
  stream.domains.assign(domains.begin(), domains.end());

  for (const auto& split : split_names()) {
    const fs::path qp = root / "queries" / (split + ".tsv");
    auto& list = stream.queries[split];
    if (fs::exists(qp)) {
      for_lines(qp, [&](const std::string& line, int lineno) {
        const auto cols = split_tabs(line);
        if (cols.size() != 4) malformed(qp, lineno, "expected query_id<TAB>session<TAB>domain<TAB>text");
        Query q;
        q.id = cols[0];
        try {
          std::size_t used = 0;
          q.session = std::stoi(cols[1], &used);
          if (used != cols[1].size()) throw std::invalid_argument("");
        } catch (const std::exception&) {
          malformed(qp, lineno, "session must be an integer");
        }
        if (q.session < 0 || q.session > stream.last_session()) malformed(qp, lineno, "session out of range");
        if (split == "train" && q.session != 0) malformed(qp, lineno, "training queries belong to session 0");
        q.domain = cols[2];
        q.tokens = lexical::tokenize(cols[3]);
        if (q.tokens.empty()) malformed(qp, lineno, "query has no tokens");
        list.push_back(std::move(q));
      });
    }
    const fs::path rp = root / "qrels" / (split + ".txt");
    stream.qrels[split] = fs::exists(rp) ? read_qrels(rp) : QRels{};
  }
  if (fs::exists(root / "qrels" / "unlabeled.txt")) stream.unlabeled = read_qrels(root / "qrels" / "unlabeled.txt");
  validate_stream(stream);
  return stream;
}

void validate_stream(const SessionStream& stream) {
  const auto where = stream.doc_sessions();
  std::vector<std::string> offenders;
  for (const auto& [split, qrels] : stream.qrels) {
    std::map<QueryId, int> qsession;
    for (const auto& q : stream.split(split)) qsession.emplace(q.id, q.session);
    for (const auto& [qid, docs] : qrels) {
      auto qs = qsession.find(qid);
      if (qs == qsession.end()) {
        offenders.push_back(split + ": unknown query " + qid);
        continue;
      }
      for (const auto& d : docs) {
        auto ds = where.find(d);
        if (ds == where.end()) {
          offenders.push_back(split + ": " + qid + " -> unknown document " + d);
        } else if (ds->second > qs->second) {
          offenders.push_back(split + ": " + qid + " (session " + std::to_string(qs->second) + ") -> " + d +
                              " from future session " + std::to_string(ds->second));
        }
      }
    }
  }
  for (const auto& [qid, docs] : stream.unlabeled) {
    for (const auto& d : docs) {
      if (where.count(d) == 0) offenders.push_back("unlabeled: " + qid + " -> unknown document " + d);
    }
  }
  if (!offenders.empty()) {
    std::string msg = "invalid qrels (" + std::to_string(offenders.size()) + " entries):";
    for (const auto& o : offenders) msg += "\n  " + o;
    throw std::runtime_error(msg);
  }
}

}  // namespace l2r::benchmark
