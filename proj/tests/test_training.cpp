#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "hubsim/errors.hpp"
#include "hubsim/training.hpp"
#include "hubsim/world.hpp"

using namespace hubsim;

TEST_CASE("flow interpolant endpoints and midpoint") {
  Tensor z0({2, 3}), eps({2, 3});
  for (std::size_t i = 0; i < 6; ++i) {
    z0[i] = static_cast<float>(i);
    eps[i] = -2.0f * static_cast<float>(i) + 1.0f;
  }
  CHECK(flow_interpolant(z0, eps, 0.0) == z0);
  CHECK(flow_interpolant(z0, eps, 1.0) == eps);
  const Tensor mid = flow_interpolant(z0, eps, 0.5);
  for (std::size_t i = 0; i < 6; ++i) CHECK(mid[i] == doctest::Approx(0.5 * (z0[i] + eps[i])));
  CHECK_THROWS_AS(flow_interpolant(z0, Tensor({3, 2}), 0.5), ShapeError);
  CHECK_THROWS(flow_interpolant(z0, eps, 1.5));
  CHECK_THROWS(flow_interpolant(z0, eps, -0.1));
}

TEST_CASE("per-block interpolant") {
  Tensor z0({2, 4, 1}, 1.0f), eps({2, 4, 1}, 0.0f);
  const Tensor out = flow_interpolant_blocks(z0, eps, {0.0, 0.75}, 2);
  for (std::size_t p = 0; p < 2; ++p) {
    CHECK(out.at({p, 0, 0}) == 1.0f);
    CHECK(out.at({p, 1, 0}) == 1.0f);
    CHECK(out.at({p, 2, 0}) == 0.25f);
    CHECK(out.at({p, 3, 0}) == 0.25f);
  }
  CHECK_THROWS_AS(flow_interpolant_blocks(z0, eps, {0.1, 0.2, 0.3}, 2), ShapeError);
  CHECK_THROWS(flow_interpolant_blocks(z0, eps, {0.1, 2.0}, 2));
}

TEST_CASE("diffusion forcing noise is independent and uniform") {
  RngStream rng(3);
  const std::size_t N = 20000;
  std::vector<double> a, b;
  for (std::size_t i = 0; i < N; ++i) {
    const auto s = diffusion_forcing_noise(rng, 2);
    REQUIRE(s.size() == 2);
    CHECK((s[0] >= 0.0 && s[0] < 1.0));
    a.push_back(s[0]);
    b.push_back(s[1]);
  }
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < N; ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= N;
  mb /= N;
  CHECK(std::abs(ma - 0.5) < 0.02);
  CHECK(std::abs(mb - 0.5) < 0.02);
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < N; ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  CHECK(std::abs(sab / std::sqrt(saa * sbb)) < 0.05);
  CHECK_THROWS(diffusion_forcing_noise(rng, 0));
}

TEST_CASE("synthetic world") {
  const ToyModelConfig mc;
  const SyntheticWorld world(mc, {});
  Tensor64 state({4});
  state[0] = 1.0;
  state[2] = -0.5;
  Tensor64 pos({2, 2}, 0.3);

  SUBCASE("idle agents see a frozen world") {
    const Tensor z = world.render(state, pos, Tensor({2, 5, 25}, 0.0f));
    const std::size_t frame = 2 * 2 * 4;
    for (std::size_t p = 0; p < 2; ++p) {
      for (std::size_t t = 1; t < 5; ++t) {
        for (std::size_t i = 0; i < frame; ++i) {
          CHECK(z[(p * 5 + t) * frame + i] == z[(p * 5) * frame + i]);
        }
      }
    }
  }
  SUBCASE("an action reaches every agent only from the next frame") {
    RngStream rng(4);
    const Tensor acts = world.random_actions(rng, 2, 5);
    Tensor moved = acts;
    moved.at({0, 2, 23}) += 1.5f;
    const Tensor a = world.render(state, pos, acts);
    const Tensor b = world.render(state, pos, moved);
    const std::size_t frame = 16;
    for (std::size_t p = 0; p < 2; ++p) {
      for (std::size_t t = 0; t < 5; ++t) {
        bool same = true;
        for (std::size_t i = 0; i < frame; ++i) same = same && a[(p * 5 + t) * frame + i] == b[(p * 5 + t) * frame + i];
        if (t < 2 || (t == 2 && p == 1)) {
          CHECK(same);
        } else {
          CHECK_FALSE(same);
        }
      }
    }
  }
  SUBCASE("sampling is seeded") {
    RngStream r1(5), r2(5);
    const WorldSample s1 = world.sample(r1, 3, 6), s2 = world.sample(r2, 3, 6);
    CHECK(s1.latents == s2.latents);
    CHECK(s1.actions == s2.actions);
    CHECK(s1.latents.shape() == Shape{3, 6, 2, 2, 4});
  }
  CHECK_THROWS_AS(world.render(state, pos, Tensor({2, 5, 24})), ShapeError);
}

TEST_CASE("make_example") {
  const ToyModelConfig mc;
  const SyntheticWorld world(mc, {});
  RngStream r(6);
  const WorldSample s = world.sample(r, 2, 6);
  RngStream a(7), b(7);
  const FlowExample<float> e1 = make_example(s, mc, a), e2 = make_example(s, mc, b);
  CHECK(e1.eps == e2.eps);
  CHECK(e1.sigmas == e2.sigmas);
  CHECK(e1.sigmas.size() == 2);
  CHECK(e1.assignment.vertex == e2.assignment.vertex);
  CHECK_NOTHROW(validate_assignment(e1.assignment, mc.pool_size));
  RngStream c(8);
  const WorldSample bad = world.sample(c, 2, 5);
  CHECK_THROWS(make_example(bad, mc, c));
}

namespace {

TrainConfig short_run(double lr) {
  TrainConfig t;
  t.steps = 5;
  t.lr = lr;
  t.eval_every = 0;
  return t;
}

}  // namespace

TEST_CASE("zero learning rate leaves the held-out loss unchanged") {
  Model<float> m{ToyModelConfig{}};
  m.initialize(1);
  const TrainRecord r = train_toy(m, short_run(0.0));
  REQUIRE(r.eval.size() == 2);
  CHECK(r.initial_eval() == r.final_eval());
}

TEST_CASE("training is reproducible and matches the frozen curve") {
  Model<float> a{ToyModelConfig{}}, b{ToyModelConfig{}};
  a.initialize(1);
  b.initialize(1);
  const TrainRecord ra = train_toy(a, short_run(1e-2));
  const TrainRecord rb = train_toy(b, short_run(1e-2));
  CHECK(ra.loss == rb.loss);
  CHECK(ra.eval == rb.eval);
  CHECK(a.params().out_w == b.params().out_w);

  const double golden[] = {2.21042396, 2.34433106, 2.06216084, 1.9671608, 2.13689284};
  REQUIRE(ra.loss.size() == 5);
  for (std::size_t i = 0; i < 5; ++i) CHECK(ra.loss[i] == doctest::Approx(golden[i]).epsilon(1e-5));
  CHECK(ra.initial_eval() == doctest::Approx(1.98701899).epsilon(1e-5));
  CHECK(ra.final_eval() == doctest::Approx(1.7533803).epsilon(1e-5));

  const std::string csv = ra.metrics_csv();
  CHECK(csv.rfind("step,loss,eval_loss\n0,", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 7);
  CHECK(csv.substr(csv.rfind('\n', csv.size() - 2) + 1, 3) == "5,,");
}

TEST_CASE("train config validation") {
  TrainConfig t;
  CHECK_NOTHROW(t.validate());
  t.lr = -1;
  CHECK_THROWS(t.validate());
  t = {};
  t.momentum = 1.0;
  CHECK_THROWS(t.validate());
  t = {};
  t.batch = 0;
  CHECK_THROWS(t.validate());
}
