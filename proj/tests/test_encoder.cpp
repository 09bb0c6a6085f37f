#include <cmath>
#include <fstream>

#include "doctest.h"
#include "l2r/encoder.hpp"
#include "support.hpp"

using namespace l2r;
using namespace l2r::encoder;

TEST_CASE("featurize") {
  CHECK(featurize({}, 64).empty());
  const auto aa = featurize({"a", "a"}, 64);
  REQUIRE(aa.nnz() == 1);
  CHECK(std::abs(aa.weights[0]) == doctest::Approx(1.0));

  // every token collides into index 0 when F = 1
  const auto a = featurize({"a"}, 1).weights[0];
  const auto b = featurize({"b"}, 1).weights[0];
  const auto ab = featurize({"a", "b"}, 1);
  REQUIRE(ab.nnz() == 1);
  CHECK(ab.indices[0] == 0);
  const double sum = a + b;
  CHECK(ab.weights[0] == doctest::Approx(sum == 0.0 ? 0.0 : sum / std::abs(sum)));

  CHECK_THROWS(featurize({"a"}, 0));
}

TEST_CASE("featurize output is sorted and unit norm") {
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::string> toks;
    for (int k = 0; k < 12; ++k) toks.push_back("t" + std::to_string(rng.uniform_index(30)));
    const auto x = featurize(toks, 97);
    double n2 = 0.0;
    for (std::size_t i = 0; i < x.nnz(); ++i) {
      if (i > 0) CHECK(x.indices[i - 1] < x.indices[i]);
      n2 += x.weights[i] * x.weights[i];
    }
    if (n2 > 0.0) CHECK(n2 == doctest::Approx(1.0));
  }
}

TEST_CASE("encode is linear and reads rows") {
  auto p = EncoderParams::random(16, 4, 9);
  CHECK(encode(p, FeatureVector{}, Tower::query) == Embedding(4, 0.0));

  const FeatureVector e3{{3}, {1.0}};
  const auto row = p.row(Tower::document, 3);
  CHECK(encode(p, e3, Tower::document) == Embedding(row.begin(), row.end()));

  Rng rng(2);
  FeatureVector x{{1, 5, 7}, {rng.uniform_real(), rng.uniform_real(), rng.uniform_real()}};
  const auto e = encode(p, x, Tower::query);
  const auto e25 = encode(p, scaled(x, 2.5), Tower::query);
  for (std::size_t c = 0; c < 4; ++c) CHECK(e25[c] == doctest::Approx(2.5 * e[c]));
}

TEST_CASE("init bound and tower layout") {
  const std::uint32_t F = 100;
  const auto p = EncoderParams::random(F, 8, 1, false, 3.0);
  const double bound = 3.0 / std::sqrt(static_cast<double>(F));
  double mx = 0.0;
  for (double v : p.matrix(0)) mx = std::max(mx, std::abs(v));
  CHECK(mx <= bound);
  CHECK(mx > 0.9 * bound);
  CHECK(p.matrix(0) == p.matrix(1));
  CHECK(p.matrix_of(Tower::document) == 1);

  const auto s = EncoderParams::random(F, 8, 1, true);
  CHECK(s.matrix_count() == 1);
  CHECK(s.matrix_of(Tower::document) == 0);
  CHECK_THROWS(EncoderParams::random(F, 8, 1, false, 0.0));
  CHECK_THROWS(EncoderParams::random(F, 8, 1, false, NAN));
  CHECK(EncoderParams::random(F, 8, 5) == EncoderParams::random(F, 8, 5));
}

TEST_CASE("score") {
  CHECK(score(Embedding{1, 0}, Embedding{0, 1}) == 0.0);
  CHECK(score(Embedding{1, 2}, Embedding{3, 4}) == 11.0);
  CHECK_THROWS(score(Embedding{1}, Embedding{1, 2}));
  Rng rng(6);
  for (int i = 0; i < 20; ++i) {
    const auto a = testing::random_vec(5, rng);
    const auto b = testing::random_vec(5, rng);
    CHECK(score(a, b) == score(b, a));
  }
}

TEST_CASE("encode_backward") {
  const auto p = EncoderParams::random(16, 3, 2);
  CHECK(encode_backward(p, FeatureVector{{2, 4}, {0.6, 0.8}}, Tower::query, Embedding(3, 0.0)).rows(0).size() == 2);
  const auto zero = encode_backward(p, FeatureVector{{2, 4}, {0.6, 0.8}}, Tower::query, Embedding(3, 0.0));
  for (const auto& [f, vals] : zero.rows(0)) CHECK(vals == std::vector<double>(3, 0.0));

  const Embedding g{0.5, -1.0, 2.0};
  const auto one = encode_backward(p, FeatureVector{{7}, {1.0}}, Tower::document, g);
  CHECK(one.rows(0).empty());
  REQUIRE(one.rows(1).size() == 1);
  CHECK(one.rows(1).at(7) == g);
  CHECK_THROWS(encode_backward(p, FeatureVector{{99}, {1.0}}, Tower::query, g));
}

TEST_CASE("score gradient matches central differences") {
  auto p = EncoderParams::random(32, 6, 3, false, 4.0);
  const FeatureVector xq = featurize({"alpha", "beta", "gamma"}, 32);
  const FeatureVector xd = featurize({"beta", "delta"}, 32);
  auto loss = [&](const EncoderParams& w) {
    return score(encode(w, xq, Tower::query), encode(w, xd, Tower::document));
  };
  ParamGradient g(6);
  encode_backward(p, xq, Tower::query, encode(p, xd, Tower::document), g);
  encode_backward(p, xd, Tower::document, encode(p, xq, Tower::query), g);
  const double eps = 1e-6;
  double worst = 0.0;
  for (int m = 0; m < 2; ++m) {
    for (std::uint32_t f = 0; f < 32; ++f) {
      for (std::size_t c = 0; c < 6; ++c) {
        double& w = p.matrix(m)[f * 6 + c];
        const double keep = w;
        w = keep + eps;
        const double up = loss(p);
        w = keep - eps;
        const double down = loss(p);
        w = keep;
        const double numeric = (up - down) / (2 * eps);
        const double exact = g.at(m, f, c);
        worst = std::max(worst, std::abs(numeric - exact) / std::max({std::abs(numeric), std::abs(exact), 1e-6}));
      }
    }
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("sgd touches only gradient rows") {
  auto p = EncoderParams::random(8, 2, 1);
  const auto before = p;
  ParamGradient g(2);
  g.row(1, 5)[0] = 1.0;
  sgd_step(p, g, 0.5);
  CHECK(p.row(Tower::document, 5)[0] == doctest::Approx(before.row(Tower::document, 5)[0] - 0.5));
  CHECK(p.matrix(0) == before.matrix(0));
  for (std::uint32_t f = 0; f < 8; ++f) {
    if (f == 5) continue;
    CHECK(std::equal(p.row(Tower::document, f).begin(), p.row(Tower::document, f).end(),
                     before.row(Tower::document, f).begin()));
  }
}

TEST_CASE("checkpoint round trip") {
  auto p = EncoderParams::random(64, 5, 8, false, 2.0);
  p.version_tag = 3;
  const auto path = testing::scratch_dir("encoder") / "params.bin";
  p.save(path);
  CHECK(EncoderParams::load(path) == p);
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << "garbage";
  }
  CHECK_THROWS(EncoderParams::load(path));
}
