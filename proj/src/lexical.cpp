#include "l2r/lexical.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

namespace l2r::lexical {

namespace {

constexpr std::string_view kMagic = "L2R-BM25";
constexpr int kFormatVersion = 1;

std::vector<std::string> distinct_terms(const std::vector<std::string>& tokens) {
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (const auto& t : tokens) {
    if (seen.insert(t).second) out.push_back(t);
  }
  return out;
}

bool ranks_before(const ScoredDoc& a, const ScoredDoc& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.doc_id < b.doc_id;
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  for (char c : text) {
    const auto uc = static_cast<unsigned char>(c);
    if (std::isalnum(uc)) {
      current.push_back(static_cast<char>(std::tolower(uc)));
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

void InvertedIndex::add_documents(const std::vector<std::pair<DocId, std::vector<std::string>>>& docs,
                                  int session) {
  std::set<DocId> batch;
  for (const auto& [id, tokens] : docs) {
    if (ordinal_.count(id) != 0 || !batch.insert(id).second) {
      throw std::invalid_argument("duplicate doc_id in lexical index: " + id);
    }
  }
  for (const auto& [id, tokens] : docs) {
    const auto ord = static_cast<std::uint32_t>(docs_.size());
    docs_.push_back({id, static_cast<std::uint32_t>(tokens.size()), session});
    ordinal_.emplace(id, ord);
    total_length_ += tokens.size();

    std::map<std::string_view, std::uint32_t> tf;
    for (const auto& t : tokens) ++tf[t];
    for (const auto& [term, count] : tf) {
      postings_[std::string(term)].push_back({ord, count});
    }
  }
}

double InvertedIndex::idf(std::size_t df) const {
  const double n = static_cast<double>(docs_.size());
  const double d = static_cast<double>(df);
  return std::log(1.0 + (n - d + 0.5) / (d + 0.5));
}

double InvertedIndex::term_weight(std::uint32_t tf, std::uint32_t doc_len) const {
  const double avgdl = avg_doc_len();
  const double norm = params_.k1 * (1.0 - params_.b + params_.b * static_cast<double>(doc_len) / avgdl);
  const double f = static_cast<double>(tf);
  return f * (params_.k1 + 1.0) / (f + norm);
}

std::size_t InvertedIndex::document_frequency(const std::string& term) const {
  auto it = postings_.find(term);
  return it == postings_.end() ? 0 : it->second.size();
}

std::vector<ScoredDoc> InvertedIndex::bm25_topk(const std::vector<std::string>& query_tokens, std::size_t k,
                                                const Filter& filter) const {
  if (k == 0) throw std::invalid_argument("bm25_topk requires k >= 1");
  std::unordered_map<std::uint32_t, double> acc;
  for (const auto& term : distinct_terms(query_tokens)) {
    auto it = postings_.find(term);
    if (it == postings_.end()) continue;
    const double w = idf(it->second.size());
    for (const auto& p : it->second) {
      const DocInfo& info = docs_[p.doc];
      if (filter && !filter(info)) continue;
      acc[p.doc] += w * term_weight(p.tf, info.length);
    }
  }
  std::vector<ScoredDoc> hits;
  hits.reserve(acc.size());
  for (const auto& [ord, s] : acc) hits.push_back({docs_[ord].id, s});
  const std::size_t keep = std::min(k, hits.size());
  std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(keep), hits.end(), ranks_before);
  hits.resize(keep);
  return hits;
}

double InvertedIndex::score(const std::vector<std::string>& query_tokens, const DocId& doc) const {
  auto o = ordinal_.find(doc);
  if (o == ordinal_.end()) return 0.0;
  const std::uint32_t ord = o->second;
  double s = 0.0;
  for (const auto& term : distinct_terms(query_tokens)) {
    auto it = postings_.find(term);
    if (it == postings_.end()) continue;
    for (const auto& p : it->second) {
      if (p.doc == ord) {
        s += idf(it->second.size()) * term_weight(p.tf, docs_[ord].length);
        break;
      }
    }
  }
  return s;
}

// Line format:
//   L2R-BM25 <version>
//   params <k1> <b>
//   doc <id> <length> <session>        (in ordinal order)
//   term <term> <ord>:<tf> ...         (terms sorted)
void InvertedIndex::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write lexical index: " + path.string());
  out.precision(17);
  out << kMagic << ' ' << kFormatVersion << '\n';
  out << "params " << params_.k1 << ' ' << params_.b << '\n';
  for (const auto& d : docs_) out << "doc " << d.id << ' ' << d.length << ' ' << d.session << '\n';
  std::vector<const std::string*> terms;
  terms.reserve(postings_.size());
  for (const auto& [t, _] : postings_) terms.push_back(&t);
  std::sort(terms.begin(), terms.end(), [](auto* a, auto* b) { return *a < *b; });
  for (const auto* t : terms) {
    out << "term " << *t;
    for (const auto& p : postings_.at(*t)) out << ' ' << p.doc << ':' << p.tf;
    out << '\n';
  }
}

InvertedIndex InvertedIndex::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read lexical index: " + path.string());
  std::string line;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& why) {
    throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": " + why);
  };

  ++line_no;
  if (!std::getline(in, line)) fail("empty file");
  {
    std::istringstream hs(line);
    std::string magic;
    int version = 0;
    hs >> magic >> version;
    if (magic != kMagic) fail("bad magic");
    if (version != kFormatVersion) fail("unsupported version " + std::to_string(version));
  }

  InvertedIndex idx;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string kind;
    ls >> kind;
    if (kind == "params") {
      if (!(ls >> idx.params_.k1 >> idx.params_.b)) fail("malformed params");
    } else if (kind == "doc") {
      DocInfo d;
      if (!(ls >> d.id >> d.length >> d.session)) fail("malformed doc");
      if (idx.ordinal_.count(d.id) != 0) fail("duplicate doc " + d.id);
      idx.ordinal_.emplace(d.id, static_cast<std::uint32_t>(idx.docs_.size()));
      idx.total_length_ += d.length;
      idx.docs_.push_back(std::move(d));
    } else if (kind == "term") {
      std::string term;
      if (!(ls >> term)) fail("malformed term");
      auto& plist = idx.postings_[term];
      std::string pair;
      while (ls >> pair) {
        const auto colon = pair.find(':');
        if (colon == std::string::npos) fail("malformed posting");
        Posting p{static_cast<std::uint32_t>(std::stoul(pair.substr(0, colon))),
                  static_cast<std::uint32_t>(std::stoul(pair.substr(colon + 1)))};
        if (p.doc >= idx.docs_.size()) fail("posting references unknown doc");
        plist.push_back(p);
      }
    } else {
      fail("unknown record '" + kind + "'");
    }
  }
  return idx;
}

}  // namespace l2r::lexical
