#include "l2r/geometry.hpp"

#include <atomic>
#include <cmath>
#include <stdexcept>

namespace l2r::geometry {

namespace {

std::atomic<std::uint64_t> pss_calls{0};
std::atomic<std::uint64_t> isd_calls{0};

double dot(Vec a, Vec b) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("embedding dimension mismatch");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double query_norm(Vec q) {
  double n = std::sqrt(dot(q, q));
  if (!(n > 0.0) || !std::isfinite(n)) {
    throw std::invalid_argument("degenerate query embedding");
  }
  return n;
}

}  // namespace

double scalar_proj(Vec d, Vec q) { return dot(q, d) / query_norm(q); }

Embedding proj_parallel(Vec d, Vec q) {
  const double norm = query_norm(q);
  const double coef = dot(q, d) / (norm * norm);
  Embedding out(q.size());
  for (std::size_t i = 0; i < q.size(); ++i) out[i] = coef * q[i];
  return out;
}

Embedding proj_perp(Vec d, Vec q) {
  Embedding out = proj_parallel(d, q);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = d[i] - out[i];
  return out;
}

double pss(Vec d, Vec d_pos, Vec q) {
  // Both parallel parts lie on the q axis, so the gap vector is (a - b) q_hat
  // and it points the same way as d+_par exactly when (a - b) * a >= 0.
  pss_calls.fetch_add(1, std::memory_order_relaxed);
  const double a = scalar_proj(d_pos, q);
  const double b = scalar_proj(d, q);
  const double sign = (a >= 0.0) ? 1.0 : -1.0;
  return sign * (a - b);
}

double isd(Vec d, std::span<const Embedding> others, Vec q) {
  if (others.empty()) {
    throw std::invalid_argument("ISD undefined on empty set");
  }
  const Embedding perp = proj_perp(d, q);
  std::vector<Embedding> perps;
  perps.reserve(others.size());
  for (const auto& o : others) perps.push_back(proj_perp(o, q));
  return mean_distance(perp, perps);
}

double distance(Vec a, Vec b) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("embedding dimension mismatch");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double diff = a[i] - b[i];
    s += diff * diff;
  }
  return std::sqrt(s);
}

double mean_distance(Vec perp, std::span<const Embedding> perps) {
  if (perps.empty()) {
    throw std::invalid_argument("ISD undefined on empty set");
  }
  isd_calls.fetch_add(1, std::memory_order_relaxed);
  double total = 0.0;
  for (const auto& p : perps) total += distance(perp, p);
  return total / static_cast<double>(perps.size());
}

CallCounts call_counts() {
  return {pss_calls.load(std::memory_order_relaxed), isd_calls.load(std::memory_order_relaxed)};
}

void reset_call_counts() {
  pss_calls.store(0, std::memory_order_relaxed);
  isd_calls.store(0, std::memory_order_relaxed);
}

}  // namespace l2r::geometry
