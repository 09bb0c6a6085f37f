#include "l2r/encoder.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "binary_io.hpp"

namespace l2r::encoder {

namespace {

constexpr std::string_view kCheckpointMagic = "L2RENCv1";
constexpr std::uint64_t kSignBasis = 0x84222325cbf29ce4ULL;

void check_index(const EncoderParams& p, std::uint32_t feature) {
  if (feature >= p.feature_dim()) {
    throw std::out_of_range("feature index " + std::to_string(feature) + " >= F=" +
                            std::to_string(p.feature_dim()));
  }
}

}  // namespace

FeatureVector featurize(const std::vector<std::string>& tokens, std::uint32_t feature_dim) {
  if (feature_dim == 0) throw std::invalid_argument("feature space must be non-empty");
  std::map<std::uint32_t, double> acc;
  for (const auto& t : tokens) {
    const auto idx = static_cast<std::uint32_t>(fnv1a64(t) % feature_dim);
    const double sign = (fnv1a64(t, kSignBasis) & 1ULL) ? 1.0 : -1.0;
    acc[idx] += sign;
  }
  FeatureVector x;
  double norm2 = 0.0;
  for (const auto& [i, w] : acc) {
    x.indices.push_back(i);
    x.weights.push_back(w);
    norm2 += w * w;
  }
  if (norm2 > 0.0) {
    const double inv = 1.0 / std::sqrt(norm2);
    for (double& w : x.weights) w *= inv;
  }
  return x;
}

FeatureVector scaled(const FeatureVector& x, double alpha) {
  FeatureVector out = x;
  for (double& w : out.weights) w *= alpha;
  return out;
}

FeatureVector combine(const FeatureVector& x, double a, const FeatureVector& y, double b) {
  std::map<std::uint32_t, double> acc;
  for (std::size_t i = 0; i < x.nnz(); ++i) acc[x.indices[i]] += a * x.weights[i];
  for (std::size_t i = 0; i < y.nnz(); ++i) acc[y.indices[i]] += b * y.weights[i];
  FeatureVector out;
  for (const auto& [i, w] : acc) {
    out.indices.push_back(i);
    out.weights.push_back(w);
  }
  return out;
}

EncoderParams::EncoderParams(std::uint32_t feature_dim, std::size_t dim, bool shared_towers)
    : feature_dim_(feature_dim), dim_(dim), shared_(shared_towers) {
  if (feature_dim == 0 || dim == 0) throw std::invalid_argument("encoder shape must be positive");
  weights_[0].assign(static_cast<std::size_t>(feature_dim) * dim, 0.0);
  if (!shared_) weights_[1].assign(static_cast<std::size_t>(feature_dim) * dim, 0.0);
}

EncoderParams EncoderParams::random(std::uint32_t feature_dim, std::size_t dim, std::uint64_t seed,
                                    bool shared_towers, double scale) {
  if (!(scale > 0.0) || !std::isfinite(scale)) throw std::invalid_argument("init scale must be positive");
  EncoderParams p(feature_dim, dim, shared_towers);
  Rng rng(seed);
  const double bound = scale / std::sqrt(static_cast<double>(feature_dim));
  for (double& w : p.weights_[0]) w = rng.uniform_real(-bound, bound);
  if (!shared_towers) p.weights_[1] = p.weights_[0];
  return p;
}

std::span<double> EncoderParams::row(Tower t, std::uint32_t feature) {
  check_index(*this, feature);
  return {weights_[matrix_of(t)].data() + static_cast<std::size_t>(feature) * dim_, dim_};
}

std::span<const double> EncoderParams::row(Tower t, std::uint32_t feature) const {
  check_index(*this, feature);
  return {weights_[matrix_of(t)].data() + static_cast<std::size_t>(feature) * dim_, dim_};
}

// Header: magic, F (u64), dim (u64), version_tag (u64), shared (u32), then each
// physical matrix row-major as little-endian f64.
void EncoderParams::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path.string());
  out.write(kCheckpointMagic.data(), kCheckpointMagic.size());
  io::put_u64(out, feature_dim_);
  io::put_u64(out, dim_);
  io::put_u64(out, static_cast<std::uint64_t>(version_tag));
  io::put_u32(out, shared_ ? 1 : 0);
  for (int m = 0; m < matrix_count(); ++m) {
    for (double w : weights_[m]) io::put_f64(out, w);
  }
}

EncoderParams EncoderParams::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read checkpoint: " + path.string());
  io::expect_magic(in, kCheckpointMagic, "checkpoint " + path.string());
  const auto f = io::get_u64(in);
  const auto dim = io::get_u64(in);
  const auto version = static_cast<std::int64_t>(io::get_u64(in));
  const bool shared = io::get_u32(in) != 0;
  EncoderParams p(static_cast<std::uint32_t>(f), dim, shared);
  p.version_tag = version;
  for (int m = 0; m < p.matrix_count(); ++m) {
    for (double& w : p.weights_[m]) w = io::get_f64(in);
  }
  return p;
}

Embedding encode(const EncoderParams& params, const FeatureVector& x, Tower tower) {
  Embedding out(params.dim(), 0.0);
  for (std::size_t i = 0; i < x.nnz(); ++i) {
    const auto row = params.row(tower, x.indices[i]);
    const double w = x.weights[i];
    for (std::size_t c = 0; c < out.size(); ++c) out[c] += w * row[c];
  }
  return out;
}

double score(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("score: dimension mismatch (" + std::to_string(a.size()) + " vs " +
                                std::to_string(b.size()) + ")");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

std::span<double> ParamGradient::row(int matrix, std::uint32_t feature) {
  auto [it, inserted] = rows_[matrix].try_emplace(feature);
  if (inserted) it->second.assign(dim_, 0.0);
  return it->second;
}

double ParamGradient::at(int matrix, std::uint32_t feature, std::size_t col) const {
  auto it = rows_[matrix].find(feature);
  return it == rows_[matrix].end() ? 0.0 : it->second[col];
}

void ParamGradient::add(const ParamGradient& other, double scale) {
  if (dim_ == 0) dim_ = other.dim_;
  if (other.dim_ != dim_ && !other.empty()) throw std::invalid_argument("gradient dimension mismatch");
  for (int m = 0; m < 2; ++m) {
    for (const auto& [f, vals] : other.rows_[m]) {
      auto dst = row(m, f);
      for (std::size_t c = 0; c < dim_; ++c) dst[c] += scale * vals[c];
    }
  }
}

void ParamGradient::scale(double s) {
  for (auto& rows : rows_) {
    for (auto& [_, vals] : rows) {
      for (double& v : vals) v *= s;
    }
  }
}

void encode_backward(const EncoderParams& params, const FeatureVector& x, Tower tower,
                     std::span<const double> grad_wrt_embedding, ParamGradient& grad) {
  if (grad_wrt_embedding.size() != params.dim() || grad.dim() != params.dim()) {
    throw std::invalid_argument("encode_backward: shape mismatch");
  }
  const int m = params.matrix_of(tower);
  for (std::size_t i = 0; i < x.nnz(); ++i) {
    check_index(params, x.indices[i]);
    auto dst = grad.row(m, x.indices[i]);
    const double w = x.weights[i];
    for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += w * grad_wrt_embedding[c];
  }
}

ParamGradient encode_backward(const EncoderParams& params, const FeatureVector& x, Tower tower,
                              std::span<const double> grad_wrt_embedding) {
  ParamGradient g(params.dim());
  encode_backward(params, x, tower, grad_wrt_embedding, g);
  return g;
}

void sgd_step(EncoderParams& params, const ParamGradient& grad, double learning_rate) {
  for (int m = 0; m < params.matrix_count(); ++m) {
    auto& w = params.matrix(m);
    for (const auto& [f, vals] : grad.rows(m)) {
      double* row = w.data() + static_cast<std::size_t>(f) * params.dim();
      for (std::size_t c = 0; c < params.dim(); ++c) row[c] -= learning_rate * vals[c];
    }
  }
}

}  // namespace l2r::encoder
