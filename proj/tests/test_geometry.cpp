#include <cmath>
#include <vector>

#include "doctest.h"
#include "l2r/geometry.hpp"
#include "support.hpp"

using namespace l2r;
using namespace l2r::geometry;

namespace {

// Independent 2-D oracle: perpendicular part to q written out by hand.
std::pair<double, double> perp2(double dx, double dy, double qx, double qy) {
  const double n2 = qx * qx + qy * qy;
  const double c = (dx * qx + dy * qy) / n2;
  return {dx - c * qx, dy - c * qy};
}

}  // namespace

TEST_CASE("scalar projection") {
  CHECK(scalar_proj(Embedding{3, 4}, Embedding{1, 0}) == doctest::Approx(3.0));
  CHECK(scalar_proj(Embedding{0, 5}, Embedding{1, 0}) == doctest::Approx(0.0));
  CHECK(scalar_proj(Embedding{1, 1}, Embedding{3, 4}) == doctest::Approx(1.4));
  CHECK_THROWS(scalar_proj(Embedding{1, 1}, Embedding{0, 0}));
}

TEST_CASE("parallel and perpendicular parts add back up") {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const auto d = testing::random_vec(7, rng);
    const auto q = testing::random_vec(7, rng);
    const auto par = proj_parallel(d, q);
    const auto perp = proj_perp(d, q);
    double dot = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i) {
      CHECK(par[i] + perp[i] == doctest::Approx(d[i]));
      dot += perp[i] * q[i];
    }
    CHECK(std::abs(dot) < 1e-12);
  }
}

TEST_CASE("pss") {
  CHECK(pss(Embedding{1, 0}, Embedding{3, 0}, Embedding{1, 0}) == doctest::Approx(2.0));
  CHECK(pss(Embedding{5, 0}, Embedding{3, 0}, Embedding{1, 0}) == doctest::Approx(-2.0));
  Rng rng(5);
  const auto d = testing::random_vec(5, rng);
  const auto q = testing::random_vec(5, rng);
  CHECK(pss(d, d, q) == 0.0);
  // sign(0) = +1: a positive lying orthogonal to q
  CHECK(pss(Embedding{-2, 0}, Embedding{0, 1}, Embedding{1, 0}) == doctest::Approx(2.0));
}

TEST_CASE("pss magnitude is the distance between parallel parts") {
  Rng rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    const auto d = testing::random_vec(4, rng);
    const auto dp = testing::random_vec(4, rng);
    const auto q = testing::random_vec(4, rng);
    CHECK(std::abs(pss(d, dp, q)) == doctest::Approx(distance(proj_parallel(dp, q), proj_parallel(d, q))));
  }
}

TEST_CASE("isd") {
  const Embedding q{1, 0};
  const Embedding d{0, 2};
  const std::vector<Embedding> others{{0, 0}, {0, 4}};
  CHECK(isd(d, others, q) == doctest::Approx(2.0));
  const std::vector<Embedding> parallel_only{{-2, 3}};
  CHECK(isd(Embedding{7, 3}, parallel_only, q) == doctest::Approx(0.0));
  const std::vector<Embedding> self{d};
  CHECK(isd(d, self, q) == 0.0);
  CHECK_THROWS(isd(d, std::vector<Embedding>{}, q));
}

TEST_CASE("isd agrees with a hand 2-D oracle") {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const auto q = testing::random_vec(2, rng);
    const auto d = testing::random_vec(2, rng);
    std::vector<Embedding> others;
    for (int k = 0; k < 4; ++k) others.push_back(testing::random_vec(2, rng));
    const auto [px, py] = perp2(d[0], d[1], q[0], q[1]);
    double expect = 0.0;
    for (const auto& o : others) {
      const auto [ox, oy] = perp2(o[0], o[1], q[0], q[1]);
      expect += std::hypot(px - ox, py - oy);
    }
    expect /= static_cast<double>(others.size());
    CHECK(isd(d, others, q) == doctest::Approx(expect).epsilon(1e-10));
  }
}

TEST_CASE("isd ignores scaling of q") {
  Rng rng(13);
  const auto q = testing::random_vec(6, rng);
  auto q3 = q;
  for (double& v : q3) v *= -3.0;
  const auto d = testing::random_vec(6, rng);
  const std::vector<Embedding> others{testing::random_vec(6, rng), testing::random_vec(6, rng)};
  CHECK(isd(d, others, q) == doctest::Approx(isd(d, others, q3)));
}

TEST_CASE("call counters") {
  reset_call_counts();
  const Embedding q{1, 0};
  pss(Embedding{1, 1}, Embedding{2, 2}, q);
  isd(Embedding{1, 1}, std::vector<Embedding>{{0, 1}}, q);
  CHECK(call_counts().pss == 1);
  CHECK(call_counts().isd == 1);
  reset_call_counts();
  CHECK(call_counts().pss == 0);
}
