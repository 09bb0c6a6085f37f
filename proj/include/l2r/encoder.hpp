#pragma once

/** \file encoder.hpp
 *  \brief Toy dual encoder: hashed bag-of-tokens through a linear map.
 *
 * Each tower holds an F x dim weight matrix W and maps a sparse feature
 * vector x to W^T x. Relevance is the dot product of the query and document
 * embeddings. The towers are separate copies by default and can share one
 * matrix.
 */

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "l2r/common.hpp"

namespace l2r::encoder {

enum class Tower { query, document };

/// Sparse features with strictly increasing indices.
struct FeatureVector {
  std::vector<std::uint32_t> indices;
  std::vector<double> weights;

  bool empty() const { return indices.empty(); }
  std::size_t nnz() const { return indices.size(); }
};

/// Hashes each token into [0, F) with a +-1 sign from a second hash, sums
/// collisions, then L2-normalizes when the result is nonzero.
FeatureVector featurize(const std::vector<std::string>& tokens, std::uint32_t feature_dim);

FeatureVector scaled(const FeatureVector& x, double alpha);
/// a*x + b*y with merged indices.
FeatureVector combine(const FeatureVector& x, double a, const FeatureVector& y, double b);

class EncoderParams {
 public:
  EncoderParams(std::uint32_t feature_dim, std::size_t dim, bool shared_towers = false);

  /// i.i.d. uniform in [-s/sqrt(F), s/sqrt(F)] with s = `scale` (1 by
  /// default); split towers start identical.
  static EncoderParams random(std::uint32_t feature_dim, std::size_t dim, std::uint64_t seed,
                              bool shared_towers = false, double scale = 1.0);

  std::uint32_t feature_dim() const { return feature_dim_; }
  std::size_t dim() const { return dim_; }
  bool shared_towers() const { return shared_; }

  /// Index of the physical matrix backing a tower (0 or 1).
  int matrix_of(Tower t) const { return (shared_ || t == Tower::query) ? 0 : 1; }

  std::span<double> row(Tower t, std::uint32_t feature);
  std::span<const double> row(Tower t, std::uint32_t feature) const;

  std::vector<double>& matrix(int m) { return weights_[m]; }
  const std::vector<double>& matrix(int m) const { return weights_[m]; }
  int matrix_count() const { return shared_ ? 1 : 2; }

  std::int64_t version_tag = 0;

  void save(const std::filesystem::path& path) const;
  static EncoderParams load(const std::filesystem::path& path);

  bool operator==(const EncoderParams&) const = default;

 private:
  std::uint32_t feature_dim_;
  std::size_t dim_;
  bool shared_;
  std::array<std::vector<double>, 2> weights_;
};

/// W^T x for the chosen tower.
Embedding encode(const EncoderParams& params, const FeatureVector& x, Tower tower);

/// Dot product; throws on dimension mismatch.
double score(std::span<const double> a, std::span<const double> b);

/// Sparse parameter gradient, keyed by physical matrix and feature row.
class ParamGradient {
 public:
  explicit ParamGradient(std::size_t dim = 0) : dim_(dim) {}

  std::size_t dim() const { return dim_; }
  /// Row accumulator, created zeroed on first use.
  std::span<double> row(int matrix, std::uint32_t feature);
  const std::map<std::uint32_t, std::vector<double>>& rows(int matrix) const { return rows_[matrix]; }
  /// Value at one coordinate, 0 when the row was never touched.
  double at(int matrix, std::uint32_t feature, std::size_t col) const;

  void add(const ParamGradient& other, double scale = 1.0);
  void scale(double s);
  bool empty() const { return rows_[0].empty() && rows_[1].empty(); }

 private:
  std::size_t dim_;
  std::array<std::map<std::uint32_t, std::vector<double>>, 2> rows_;
};

/// Accumulates dL/dW = x g^T into `grad` for the given tower.
void encode_backward(const EncoderParams& params, const FeatureVector& x, Tower tower,
                     std::span<const double> grad_wrt_embedding, ParamGradient& grad);

/// Convenience form returning a fresh gradient.
ParamGradient encode_backward(const EncoderParams& params, const FeatureVector& x, Tower tower,
                              std::span<const double> grad_wrt_embedding);

/// Plain SGD: W -= lr * grad, touching only rows present in grad.
void sgd_step(EncoderParams& params, const ParamGradient& grad, double learning_rate);

}  // namespace l2r::encoder
