#pragma once

/** \file benchmark.hpp
 *  \brief Session-partitioned lifelong retrieval data.
 *
 * A stream is an initial collection D_0 plus T document deltas. Only session
 * 0 carries training labels; dev/test queries exist per session and point at
 * documents available by that session.
 *
 * The synthetic generator mirrors the usual construction: "common" domains
 * arrive evenly over time while one "booming" domain surges in each upcoming
 * session. Documents are bags of tokens drawn from a domain's topic clusters
 * plus a shared background vocabulary. Every training query also gets
 * paraphrased copies of its positive scattered across later sessions as
 * unlabeled positives.
 *
 * On-disk layout under a root directory:
 *   generator.cfg                    key=value generator settings (if synthetic)
 *   sessions/s{t}/corpus.tsv         doc_id <TAB> domain <TAB> text
 *   queries/{train,dev,test}.tsv     query_id <TAB> session <TAB> domain <TAB> text
 *   qrels/{train,dev,test}.txt       query_id 0 doc_id 1
 *   qrels/unlabeled.txt              injected positives of training queries (optional)
 */

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "l2r/common.hpp"

namespace l2r::benchmark {

struct Document {
  DocId id;
  std::string domain;
  std::vector<std::string> tokens;

  bool operator==(const Document&) const = default;
};

struct Query {
  QueryId id;
  int session = 0;
  std::string domain;
  std::vector<std::string> tokens;

  bool operator==(const Query&) const = default;
};

using QRels = std::map<QueryId, std::set<DocId>>;

inline const std::vector<std::string>& split_names() {
  static const std::vector<std::string> names{"train", "dev", "test"};
  return names;
}

struct SessionStream {
  std::vector<std::string> domains;
  std::vector<std::vector<Document>> sessions;  ///< per-session deltas D_0..D_T
  std::map<std::string, std::vector<Query>> queries;
  std::map<std::string, QRels> qrels;
  QRels unlabeled;  ///< training query -> paraphrases injected into later sessions
  std::vector<std::string> warnings;

  int last_session() const { return static_cast<int>(sessions.size()) - 1; }
  std::size_t docs_through(int t) const;
  const std::vector<Query>& split(const std::string& name) const;
  /// Session each document arrived in.
  std::map<DocId, int> doc_sessions() const;

  bool operator==(const SessionStream& o) const {
    return domains == o.domains && sessions == o.sessions && queries == o.queries && qrels == o.qrels &&
           unlabeled == o.unlabeled;
  }
};

struct GeneratorConfig {
  int domains = 5;
  int common_domains = 2;  ///< the first `common_domains` are common, the rest boom one per session
  int docs_per_domain = 6000;

  double initial_common_frac = 0.7;
  double initial_booming_frac = 0.4;
  double session_common_frac = 0.1;
  double session_booming_frac = 0.5;
  double session_other_frac = 0.05;

  int topics_per_domain = 10;
  int novel_topics_per_domain = 0;  ///< topics that never appear in session 0
  int terms_per_topic = 6;
  int domain_terms = 50;            ///< domain-wide terms outside any topic
  int background_terms = 1500;
  int key_terms_per_doc = 3;
  double background_rate = 0.1;
  double key_rate = 0.5;
  double topic_rate = 0.3;          ///< remainder is domain-wide terms
  int doc_len_min = 20;
  int doc_len_max = 40;
  int query_len_min = 3;
  int query_len_max = 6;
  double query_key_rate = 0.7;
  double query_synonym_prob = 0.9;  ///< query tokens written in their synonym form

  int train_queries_per_domain = 100;
  int dev_queries_per_session = 100;
  int test_queries_per_session = 200;
  int test_extra_relevant = 0;      ///< paraphrases of a test target, same session

  int paraphrases_per_query = 4;    ///< unlabeled positives per training query
  double paraphrase_dropout = 0.3;
  double synonym_rate = 1.0;        ///< share of topic terms that have a synonym
  double synonym_sub_prob = 0.5;

  int upcoming_sessions() const { return domains - common_domains; }
  void validate() const;

  std::string to_text() const;
  static GeneratorConfig from_text(const std::string& text);
  /// Applies key=value overrides; unknown keys are errors.
  void set(const std::string& key, const std::string& value);
  static GeneratorConfig load(const std::filesystem::path& path);
  static std::vector<std::string> keys();
  void save(const std::filesystem::path& path) const;
};

/// Per-session base document counts for each domain; throws with the per
/// domain deficit when fractions ask for more than 100%.
std::vector<std::vector<int>> session_counts(const GeneratorConfig& cfg);

SessionStream generate_synthetic_stream(const GeneratorConfig& cfg, std::uint64_t seed);

/// Paraphrase of a token list: per-token dropout plus synonym substitution.
std::vector<std::string> paraphrase(const std::vector<std::string>& tokens,
                                    const std::map<std::string, std::string>& synonyms, double dropout,
                                    double substitute, Rng& rng);

void write_stream(const SessionStream& stream, const std::filesystem::path& root,
                  const GeneratorConfig* generator = nullptr);
SessionStream load_external_stream(const std::filesystem::path& root);

/// Throws listing every qrels entry that points at an unknown document or at
/// a document from a later session than its query.
void validate_stream(const SessionStream& stream);

}  // namespace l2r::benchmark
