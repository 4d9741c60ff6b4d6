#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>

#include "doctest.h"
#include "hubsim/errors.hpp"
#include "hubsim/kernels.hpp"
#include "hubsim/ops.hpp"
#include "hubsim/rng.hpp"
#include "hubsim/tensor.hpp"
#include "hubsim/tensor_io.hpp"
#include "json.hpp"

using namespace hubsim;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed) {
  Tensor t(std::move(shape));
  RngStream r(seed);
  for (auto& v : t.data()) v = static_cast<float>(r.normal());
  return t;
}

}  // namespace

TEST_CASE("tensor shape and storage agree") {
  Tensor t({2, 3, 4});
  CHECK(t.size() == 24);
  CHECK(shape_numel(t.shape()) == t.size());
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<float>(3)), ShapeError);
  t.at({1, 2, 3}) = 5.0f;
  CHECK(t[23] == 5.0f);
  CHECK_THROWS(t.reshape({5, 5}));
}

TEST_CASE("matmul identity and row sums") {
  Tensor eye({3, 3}, 0.0f);
  for (std::size_t i = 0; i < 3; ++i) eye.at({i, i}) = 1.0f;
  const Tensor m = random_tensor({3, 3}, 3);
  CHECK(matmul(eye, m) == m);

  const Tensor a({2, 3}, 1.0f), b({3, 1}, 1.0f);
  const Tensor c = matmul(a, b);
  REQUIRE(c.shape() == Shape{2, 1});
  CHECK(c[0] == 3.0f);
  CHECK(c[1] == 3.0f);
}

TEST_CASE("matmul matches a triple loop") {
  const Tensor a = random_tensor({4, 4}, 11), b = random_tensor({4, 4}, 12);
  const Tensor c = matmul(a, b);
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 4; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < 4; ++k) s += double(a.at({i, k})) * b.at({k, j});
      CHECK(std::abs(c.at({i, j}) - s) < 1e-6);
    }
  }
}

TEST_CASE("matmul batches over leading axes") {
  const Tensor a = random_tensor({2, 3, 4}, 1), b = random_tensor({4, 5}, 2);
  const Tensor c = matmul(a, b);
  REQUIRE(c.shape() == Shape{2, 3, 5});
  Tensor a1({3, 4});
  std::copy_n(a.data().begin() + 12, 12, a1.data().begin());
  const Tensor c1 = matmul(a1, b);
  for (std::size_t i = 0; i < 15; ++i) CHECK(c[15 + i] == c1[i]);
}

TEST_CASE("matmul reports both shapes on mismatch") {
  const Tensor a({2, 3}), b({4, 2});
  try {
    matmul(a, b);
    FAIL("expected a shape error");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("(2, 3)") != std::string::npos);
    CHECK(msg.find("(4, 2)") != std::string::npos);
  }
}

TEST_CASE("serial and parallel gemm are bit-identical") {
  const std::size_t m = 37, k = 29, n = 41;
  const Tensor a = random_tensor({m, k}, 5), b = random_tensor({k, n}, 6);
  std::vector<float> c1(m * n), c2(m * n);
  kernels::gemm<float>(a.data(), b.data(), c1, m, k, n, false, Exec::serial);
  kernels::gemm<float>(a.data(), b.data(), c2, m, k, n, false, Exec::parallel);
  CHECK(std::memcmp(c1.data(), c2.data(), c1.size() * sizeof(float)) == 0);
}

TEST_CASE("repeated evaluation is bit-identical") {
  const Tensor a = random_tensor({8, 16}, 7), b = random_tensor({16, 8}, 8);
  CHECK(matmul(a, b) == matmul(a, b));
  BoolMatrix allowed(8, 8, true);
  const Tensor l = random_tensor({8, 8}, 9);
  CHECK(softmax_masked(l, allowed) == softmax_masked(l, allowed));
}

TEST_CASE("softmax_masked degenerate and uniform rows") {
  Tensor logits({2, 4}, 0.0f);
  BoolMatrix allowed(2, 4, false);
  allowed.set(0, 2, true);
  for (std::size_t j = 0; j < 3; ++j) allowed.set(1, j, true);
  const Tensor w = softmax_masked(logits, allowed);
  CHECK(w.at({0, 2}) == 1.0f);
  CHECK(w.at({0, 0}) == 0.0f);
  for (std::size_t j = 0; j < 3; ++j) CHECK(w.at({1, j}) == doctest::Approx(1.0 / 3).epsilon(1e-6));
  CHECK(w.at({1, 3}) == 0.0f);
}

TEST_CASE("softmax_masked matches minus-infinity substitution") {
  const std::size_t R = 6, C = 9;
  Tensor logits = random_tensor({R, C}, 21);
  for (auto& v : logits.data()) v *= 4.0f;
  RngStream r(22);
  BoolMatrix allowed(R, C, false);
  for (std::size_t i = 0; i < R; ++i) {
    allowed.set(i, i, true);
    for (std::size_t j = 0; j < C; ++j) {
      if (r.uniform() < 0.5) allowed.set(i, j, true);
    }
  }
  const Tensor w = softmax_masked(logits, allowed);
  for (std::size_t i = 0; i < R; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    std::vector<double> z(C);
    for (std::size_t j = 0; j < C; ++j) {
      z[j] = allowed(i, j) ? logits.at({i, j}) : -std::numeric_limits<double>::infinity();
      mx = std::max(mx, z[j]);
    }
    double s = 0, row = 0;
    for (auto& v : z) s += (v = std::exp(v - mx));
    for (std::size_t j = 0; j < C; ++j) {
      CHECK(std::abs(w.at({i, j}) - z[j] / s) < 1e-6);
      if (!allowed(i, j)) CHECK(w.at({i, j}) == 0.0f);
      row += w.at({i, j});
    }
    CHECK(std::abs(row - 1.0) < 1e-6);
  }
}

TEST_CASE("softmax_masked names the empty row") {
  Tensor logits({3, 3}, 0.0f);
  BoolMatrix allowed(3, 3, true);
  for (std::size_t j = 0; j < 3; ++j) allowed.set(1, j, false);
  try {
    softmax_masked(logits, allowed);
    FAIL("expected an empty-row error");
  } catch (const EmptyRowError& e) {
    CHECK(e.query == 1);
  }
}

TEST_CASE("rng golden draws") {
  RngStream r(42);
  CHECK(r.next_u64() == 6332618229526065668ull);
  CHECK(r.next_u64() == 17630415256238047317ull);
  RngStream u(42);
  CHECK(u.uniform() == 0.34329192209867343);
  CHECK(u.normal() == -2.4879496392951745);
  CHECK(RngStream(42).split("assignment").uniform() == 0.080625332391294102);
}

TEST_CASE("rng streams are reproducible and splits ignore parent draws") {
  RngStream a(7), b(7);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  const RngStream fresh(9);
  RngStream used(9);
  for (int i = 0; i < 10; ++i) used.normal();
  CHECK(fresh.split("x").next_u64() == used.split("x").next_u64());
  CHECK(fresh.split("x").next_u64() != fresh.split("y").next_u64());
  CHECK(fresh.split(1).next_u64() != fresh.split(2).next_u64());
  RngStream ui(3);
  for (int i = 0; i < 1000; ++i) {
    const double v = ui.uniform();
    CHECK((v >= 0.0 && v < 1.0));
    CHECK(ui.uniform_int(7) < 7);
  }
}

TEST_CASE("tensor dump round trip with a JSON header line") {
  const Tensor t = random_tensor({2, 3}, 4);
  std::stringstream ss;
  write_tensor(ss, t);
  const std::string raw = ss.str();
  const auto nl = raw.find('\n');
  REQUIRE(nl != std::string::npos);
  const auto header = nlohmann::json::parse(raw.substr(0, nl));
  CHECK(header["dtype"] == "f32");
  CHECK(header["byte_order"] == "little");
  CHECK(header["shape"] == nlohmann::json::array({2, 3}));
  REQUIRE(raw.size() == nl + 1 + 6 * sizeof(float));
  std::uint32_t bits = 0;
  std::memcpy(&bits, &t[0], 4);
  for (int i = 0; i < 4; ++i) {
    CHECK(static_cast<unsigned char>(raw[nl + 1 + i]) == ((bits >> (8 * i)) & 0xff));
  }
  std::stringstream in(raw);
  CHECK(read_tensor<float>(in) == t);

  Tensor64 d({3}, std::vector<double>{1.5, -2.0, 1e-300});
  std::stringstream sd;
  write_tensor(sd, d);
  CHECK(read_tensor<double>(sd) == d);
  std::stringstream wrong(raw);
  CHECK_THROWS(read_tensor<double>(wrong));
}
