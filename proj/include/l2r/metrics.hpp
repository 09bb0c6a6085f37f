#pragma once

// Per-query ranking metrics and the lifelong summaries built from the
// performance matrix p[i][j] (test queries of session j, collection up to
// session j, model after session i).

#include <optional>
#include <set>
#include <string>
#include <vector>

#include "l2r/common.hpp"

#include "json.hpp"

namespace l2r::metrics {

enum class RankMetric { recall, success, mrr };

struct MetricSpec {
  RankMetric kind = RankMetric::recall;
  std::size_t cutoff = 100;

  /// "R@100", "S@5", "MRR@10".
  std::string name() const;
  static MetricSpec parse(const std::string& name);
};

/// recall = |top-N & rel| / |rel|; success = any rel in top-N; mrr = 1/rank
/// of the first rel within top-N. Throws on an empty relevant set.
double rank_metric(RankMetric kind, std::size_t cutoff, const std::vector<DocId>& ranking,
                   const std::set<DocId>& relevant);

class PerfMatrix {
 public:
  /// Sessions 0..T.
  explicit PerfMatrix(int last_session = 0, std::string metric = "");

  int last_session() const { return last_; }
  const std::string& metric() const { return metric_; }

  void set(int i, int j, double value);
  bool has(int i, int j) const;
  /// Throws naming the cell when it was never filled.
  double at(int i, int j) const;

  /// One row per filled cell: metric,i,j,value.
  std::string to_csv(bool header = true) const;

 private:
  std::size_t idx(int i, int j) const;

  int last_;
  std::string metric_;
  std::vector<double> values_;
  std::vector<bool> filled_;
};

struct LifelongSummary {
  std::vector<double> session_perf;  ///< P_0..P_T
  std::optional<double> ap;          ///< undefined for T = 0
  std::optional<double> forget;      ///< Forget_t at the requested t (t >= 1)
  std::optional<double> fwt;         ///< needs T >= 2

  nlohmann::json to_json() const;
};

double session_perf(const PerfMatrix& m, int t);
double average_perf(const PerfMatrix& m);
double forgetting(const PerfMatrix& m, int t);
double forward_transfer(const PerfMatrix& m);

/// All summaries at session t. AP/FWT are only reported when T permits; a
/// missing cell they need is an error.
LifelongSummary lifelong_summary(const PerfMatrix& m, int t);

}  // namespace l2r::metrics
