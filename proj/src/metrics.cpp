#include "l2r/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace l2r::metrics {

std::string MetricSpec::name() const {
  switch (kind) {
    case RankMetric::recall:
      return "R@" + std::to_string(cutoff);
    case RankMetric::success:
      return "S@" + std::to_string(cutoff);
    case RankMetric::mrr:
      return "MRR@" + std::to_string(cutoff);
  }
  return "?";
}

MetricSpec MetricSpec::parse(const std::string& name) {
  const auto at = name.find('@');
  if (at == std::string::npos) throw std::invalid_argument("metric must look like R@100: " + name);
  const std::string kind = name.substr(0, at);
  MetricSpec spec;
  if (kind == "R") {
    spec.kind = RankMetric::recall;
  } else if (kind == "S") {
    spec.kind = RankMetric::success;
  } else if (kind == "MRR") {
    spec.kind = RankMetric::mrr;
  } else {
    throw std::invalid_argument("unknown metric kind: " + kind);
  }
  spec.cutoff = std::stoul(name.substr(at + 1));
  if (spec.cutoff == 0) throw std::invalid_argument("metric cutoff must be >= 1");
  return spec;
}

double rank_metric(RankMetric kind, std::size_t cutoff, const std::vector<DocId>& ranking,
                   const std::set<DocId>& relevant) {
  if (relevant.empty()) throw std::invalid_argument("rank_metric: empty relevant set");
  if (cutoff == 0) throw std::invalid_argument("rank_metric: cutoff must be >= 1");
  const std::size_t n = std::min(cutoff, ranking.size());
  std::size_t hits = 0;
  std::size_t first = 0;
  for (std::size_t r = 0; r < n; ++r) {
    if (relevant.count(ranking[r]) == 0) continue;
    ++hits;
    if (first == 0) first = r + 1;
  }
  switch (kind) {
    case RankMetric::recall:
      return static_cast<double>(hits) / static_cast<double>(relevant.size());
    case RankMetric::success:
      return hits > 0 ? 1.0 : 0.0;
    case RankMetric::mrr:
      return first > 0 ? 1.0 / static_cast<double>(first) : 0.0;
  }
  return 0.0;
}

PerfMatrix::PerfMatrix(int last_session, std::string metric)
    : last_(last_session),
      metric_(std::move(metric)),
      values_(static_cast<std::size_t>((last_session + 1) * (last_session + 1)), 0.0),
      filled_(values_.size(), false) {
  if (last_session < 0) throw std::invalid_argument("PerfMatrix needs at least one session");
}

std::size_t PerfMatrix::idx(int i, int j) const {
  if (i < 0 || j < 0 || i > last_ || j > last_) {
    throw std::out_of_range("PerfMatrix cell (" + std::to_string(i) + "," + std::to_string(j) + ") out of range");
  }
  return static_cast<std::size_t>(i * (last_ + 1) + j);
}

void PerfMatrix::set(int i, int j, double value) {
  if (!std::isfinite(value) || value < 0.0 || value > 1.0) {
    throw std::invalid_argument("PerfMatrix values must lie in [0, 1]");
  }
  const auto k = idx(i, j);
  values_[k] = value;
  filled_[k] = true;
}

bool PerfMatrix::has(int i, int j) const { return filled_[idx(i, j)]; }

double PerfMatrix::at(int i, int j) const {
  const auto k = idx(i, j);
  if (!filled_[k]) {
    throw std::invalid_argument("PerfMatrix cell (" + std::to_string(i) + "," + std::to_string(j) +
                                ") not evaluated");
  }
  return values_[k];
}

std::string PerfMatrix::to_csv(bool header) const {
  std::ostringstream out;
  out.precision(17);
  if (header) out << "metric,i,j,value\n";
  for (int i = 0; i <= last_; ++i) {
    for (int j = 0; j <= last_; ++j) {
      if (has(i, j)) out << metric_ << ',' << i << ',' << j << ',' << at(i, j) << '\n';
    }
  }
  return out.str();
}

double session_perf(const PerfMatrix& m, int t) { return m.at(t, t); }

double average_perf(const PerfMatrix& m) {
  const int T = m.last_session();
  if (T < 1) throw std::invalid_argument("AP needs at least one upcoming session");
  double s = 0.0;
  for (int t = 1; t <= T; ++t) s += m.at(t, t);
  return s / static_cast<double>(T);
}

double forgetting(const PerfMatrix& m, int t) {
  if (t < 1 || t > m.last_session()) throw std::invalid_argument("Forget_t needs 1 <= t <= T");
  double s = 0.0;
  for (int j = 0; j < t; ++j) {
    double best = -INFINITY;
    for (int l = 0; l < t; ++l) best = std::max(best, m.at(l, j) - m.at(t, j));
    s += best;
  }
  return s / static_cast<double>(t);
}

double forward_transfer(const PerfMatrix& m) {
  const int T = m.last_session();
  if (T < 2) throw std::invalid_argument("FWT needs T >= 2");
  double s = 0.0;
  for (int j = 2; j <= T; ++j) {
    for (int i = 1; i < j; ++i) s += m.at(i, j);
  }
  return s / (static_cast<double>(T) * static_cast<double>(T - 1) / 2.0);
}

LifelongSummary lifelong_summary(const PerfMatrix& m, int t) {
  const int T = m.last_session();
  if (t < 0 || t > T) throw std::invalid_argument("lifelong_summary: t out of range");
  LifelongSummary s;
  for (int k = 0; k <= t; ++k) s.session_perf.push_back(session_perf(m, k));
  if (T >= 1) s.ap = average_perf(m);
  if (t >= 1) s.forget = forgetting(m, t);
  if (T >= 2) s.fwt = forward_transfer(m);
  return s;
}

nlohmann::json LifelongSummary::to_json() const {
  nlohmann::json j;
  j["P"] = session_perf;
  j["AP"] = ap ? nlohmann::json(*ap) : nlohmann::json(nullptr);
  j["Forget"] = forget ? nlohmann::json(*forget) : nlohmann::json(nullptr);
  j["FWT"] = fwt ? nlohmann::json(*fwt) : nlohmann::json(nullptr);
  return j;
}

}  // namespace l2r::metrics
