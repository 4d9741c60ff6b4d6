#include <cmath>
#include <numbers>

#include "doctest.h"
#include "hubsim/rope.hpp"

using namespace hubsim;

namespace {

TokenCoordinate agent_at(std::int32_t p, std::size_t t, std::size_t h, std::size_t w) {
  TokenCoordinate c;
  c.identity = p;
  c.t = t;
  c.h = h;
  c.w = w;
  return c;
}

}  // namespace

TEST_CASE("origin with zero agent phase is the identity rotation") {
  const RopeLayout layout = RopeLayout::standard({16, 8, 4, 4});
  const SimplexPool pool = build_simplex_pool(4, 4, 0.0);
  const auto angles = rope_angles(layout, pool, identity_assignment(2), agent_at(1, 0, 0, 0), {2, 4, 2, 2});
  REQUIRE(angles.size() == 16);
  for (double a : angles) CHECK(a == 0.0);
}

TEST_CASE("hub tokens share the temporal phase and nothing else") {
  const RopeLayout layout = RopeLayout::standard({16, 8, 4, 4});
  const SimplexPool pool = build_simplex_pool(4, 4, 1.0);
  const GridExtent ext{2, 6, 2, 2};
  TokenCoordinate hub;
  hub.identity = kHub;
  hub.t = 3;
  const auto ha = rope_angles(layout, pool, identity_assignment(2), hub, ext);
  const auto aa = rope_angles(layout, pool, identity_assignment(2), agent_at(1, 3, 1, 1), ext);
  for (std::size_t r = 0; r < 8; ++r) CHECK(ha[r] == aa[r]);
  for (std::size_t r = 8; r < 16; ++r) CHECK(ha[r] == 0.0);

  std::vector<float> x(32);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<float>(i) * 0.1f - 1.0f;
  std::vector<float> y = x;
  apply_rotary_inplace<float>(y, ha);
  for (std::size_t i = 16; i < 32; ++i) CHECK(y[i] == x[i]);
}

TEST_CASE("agents at the same position differ only in the agent band") {
  const RopeLayout layout = RopeLayout::standard({16, 8, 4, 4});
  const SimplexPool pool = build_simplex_pool(4, 4, 1.0);
  const VertexAssignment a{{2, 0}};
  const GridExtent ext{2, 6, 2, 2};
  const auto p0 = rope_angles(layout, pool, a, agent_at(0, 2, 1, 0), ext);
  const auto p1 = rope_angles(layout, pool, a, agent_at(1, 2, 1, 0), ext);
  double d = 0;
  for (std::size_t r = 0; r < 16; ++r) {
    const bool agent_band = r >= layout.agent_offset() && r < layout.height_offset();
    if (!agent_band) CHECK(p0[r] == p1[r]);
    d += (p0[r] - p1[r]) * (p0[r] - p1[r]);
  }
  CHECK(std::abs(d - 8.0 / 3.0) < 1e-12);
}

TEST_CASE("temporal and spatial bands follow the geometric schedule") {
  const RopeLayout layout = RopeLayout::standard({16, 8, 4, 4});
  const auto f = rope_frequencies(16, 10000.0);
  REQUIRE(f.size() == 8);
  for (std::size_t k = 0; k < 8; ++k) CHECK(f[k] == doctest::Approx(std::pow(10000.0, -2.0 * k / 16)));
  const SimplexPool pool = build_simplex_pool(4, 4, 1.0);
  const auto a = rope_angles(layout, pool, identity_assignment(1), agent_at(0, 5, 1, 1), {1, 6, 2, 2});
  for (std::size_t k = 0; k < 8; ++k) CHECK(a[k] == doctest::Approx(5 * f[k]));
  const auto fh = rope_frequencies(4, 10000.0);
  CHECK(a[layout.height_offset()] == doctest::Approx(fh[0]));
  CHECK(a[layout.width_offset() + 1] == doctest::Approx(fh[1]));
}

TEST_CASE("coordinates outside the grid are rejected") {
  const RopeLayout layout = RopeLayout::standard({16, 8, 4, 4});
  const SimplexPool pool = build_simplex_pool(4, 4, 1.0);
  const GridExtent ext{2, 6, 2, 2};
  CHECK_THROWS(rope_angles(layout, pool, identity_assignment(2), agent_at(2, 0, 0, 0), ext));
  CHECK_THROWS(rope_angles(layout, pool, identity_assignment(2), agent_at(0, 6, 0, 0), ext));
  CHECK_THROWS(rope_angles(layout, pool, identity_assignment(2), agent_at(0, 0, 2, 0), ext));
}

TEST_CASE("apply_rotary identity and half turn") {
  Tensor x({2, 4}, std::vector<float>{1, 0, 3, 4, 5, 6, 7, 8});
  CHECK(apply_rotary(x, Tensor64({2}, 0.0)) == x);
  const Tensor y = apply_rotary(x, Tensor64({2}, std::vector<double>{std::numbers::pi, 0.0}));
  CHECK(std::abs(y[0] + 1.0f) < 1e-6);
  CHECK(std::abs(y[1]) < 1e-6);
  CHECK(y[2] == 3.0f);
  CHECK_THROWS(apply_rotary(Tensor({2, 3}), Tensor64({1}, 0.0)));
}

TEST_CASE("rotation preserves norms and encodes relative phase") {
  RngStream r(17);
  for (int c = 0; c < 100; ++c) {
    std::vector<double> q(16), k(16), t1(8), t2(8), dt(8);
    for (auto& v : q) v = r.normal();
    for (auto& v : k) v = r.normal();
    for (std::size_t i = 0; i < 8; ++i) {
      t1[i] = r.uniform(-10, 10);
      t2[i] = r.uniform(-10, 10);
      dt[i] = t1[i] - t2[i];
    }
    std::vector<double> q1 = q, k2 = k, qd = q;
    apply_rotary_inplace<double>(q1, t1);
    apply_rotary_inplace<double>(k2, t2);
    apply_rotary_inplace<double>(qd, dt);
    double lhs = 0, rhs = 0, n0 = 0, n1 = 0;
    for (std::size_t i = 0; i < 16; ++i) {
      lhs += q1[i] * k2[i];
      rhs += qd[i] * k[i];
      n0 += q[i] * q[i];
      n1 += q1[i] * q1[i];
    }
    CHECK(std::abs(lhs - rhs) < 1e-5);
    CHECK(std::abs(std::sqrt(n0) - std::sqrt(n1)) < 1e-5);
  }
}

TEST_CASE("inverse rotation undoes the forward one") {
  std::vector<float> x{1, 2, 3, 4}, y = x;
  const std::vector<double> a{0.3, -1.2};
  apply_rotary_inplace<float>(y, a);
  apply_rotary_inplace<float>(y, a, -1);
  for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(x[i] - y[i]) < 1e-6);
}

TEST_CASE("temporal band reallocation") {
  const RopeLayout three_d = RopeLayout::standard({96, 0, 16, 16});
  const RopeLayout four_d = reallocate_temporal_band(three_d, 32);
  CHECK(four_d.bands == RopeBands{64, 32, 16, 16});
  CHECK(four_d.d_head == 128);
  REQUIRE(four_d.temporal_freqs.size() == 32);
  for (std::size_t k = 0; k < 32; ++k) CHECK(four_d.temporal_freqs[k] == three_d.temporal_freqs[k]);
  CHECK(four_d.height_freqs == three_d.height_freqs);
  CHECK(four_d.width_freqs == three_d.width_freqs);

  const RopeLayout same = reallocate_temporal_band(three_d, 0);
  CHECK(same.bands == three_d.bands);
  CHECK(same.temporal_freqs == three_d.temporal_freqs);
  CHECK_THROWS(reallocate_temporal_band(three_d, 96));
  CHECK_THROWS(reallocate_temporal_band(three_d, 3));
}

TEST_CASE("rope table rows equal per-token angles") {
  const RopeLayout layout = RopeLayout::standard({8, 4, 2, 2});
  const SimplexPool pool = build_simplex_pool(3, 2, 1.0);
  const VertexAssignment a{{1, 2}};
  const GridExtent ext{2, 2, 1, 1};
  TokenCoordinate hub;
  hub.identity = kHub;
  hub.t = 1;
  const std::vector<TokenCoordinate> coords{agent_at(0, 0, 0, 0), agent_at(1, 1, 0, 0), hub};
  const Tensor64 table = rope_table(layout, pool, a, coords, ext);
  for (std::size_t i = 0; i < coords.size(); ++i) {
    const auto row = rope_angles(layout, pool, a, coords[i], ext);
    for (std::size_t r = 0; r < row.size(); ++r) CHECK(table.at({i, r}) == row[r]);
  }
}
