#pragma once

// Projections of document embeddings onto / away from a query direction and
// the two selection criteria built on them:
//
//   PSS(d, d+; q) - how far the labeled positive sits above d along q.
//                   High values mean d is unlikely to be an unlabeled positive.
//   ISD(d, D; q)  - mean distance between the query-orthogonal parts of d and
//                   the members of D. High values mean d is not redundant.

#include <cstdint>
#include <span>

#include "l2r/common.hpp"

namespace l2r::geometry {

using Vec = std::span<const double>;

/// Signed scalar projection (q . d) / |q|. Throws on a zero-norm query.
double scalar_proj(Vec d, Vec q);

/// Component of d along q.
Embedding proj_parallel(Vec d, Vec q);

/// Component of d orthogonal to q.
Embedding proj_perp(Vec d, Vec q);

/// Positive sample superiority. sign(0) is taken as +1.
double pss(Vec d, Vec d_pos, Vec q);

/// Inter sample diversity of d against a non-empty set.
double isd(Vec d, std::span<const Embedding> others, Vec q);

/// Euclidean distance.
double distance(Vec a, Vec b);

/// Mean distance from `perp` to each vector in `perps`. This is ISD on
/// vectors that have already been projected away from q.
double mean_distance(Vec perp, std::span<const Embedding> perps);

/// Process-wide call counts, for instrumentation in tests and reports.
struct CallCounts {
  std::uint64_t pss = 0;
  std::uint64_t isd = 0;  ///< ISD evaluations, via isd() or mean_distance()
};
CallCounts call_counts();
void reset_call_counts();

}  // namespace l2r::geometry
