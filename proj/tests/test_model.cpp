#include <cmath>
#include <cstring>

#include "doctest.h"
#include "hubsim/checks.hpp"
#include "hubsim/errors.hpp"
#include "hubsim/model.hpp"
#include "hubsim/training.hpp"

using namespace hubsim;

namespace {

template <typename T>
SequenceInputs<T> inputs(const ToyModelConfig& c, std::size_t P, std::size_t frames,
                         VertexAssignment a, std::uint64_t seed) {
  RngStream r(seed);
  SequenceInputs<T> in;
  in.latents = BasicTensor<T>({P, frames, c.height, c.width, c.latent_channels});
  for (auto& v : in.latents.data()) v = static_cast<T>(r.normal());
  const ActionLayout al = action_layout(c.action_kind);
  in.actions = BasicTensor<T>({P, frames, al.fields()});
  for (std::size_t i = 0; i < in.actions.size(); ++i) {
    in.actions[i] = i % al.fields() < al.discrete ? T(r.uniform() < 0.3) : static_cast<T>(r.normal());
  }
  in.sigmas.resize(frames / c.block_frames);
  for (auto& s : in.sigmas) s = r.uniform();
  in.assignment = std::move(a);
  return in;
}

// Rows of layer 0's attention input belonging to token i.
template <typename T>
std::vector<T> attn_row(const ForwardTape<T>& tape, std::size_t i) {
  const auto r = tape.layers[0].mha.x.row(i);
  return {r.begin(), r.end()};
}

}  // namespace

TEST_CASE("action layouts and frames") {
  CHECK(action_layout(ActionKind::game).discrete == 23);
  CHECK(action_layout(ActionKind::game).fields() == 25);
  CHECK(action_layout(ActionKind::robot).fields() == 10);
  CHECK(kGameFields[0] == "inventory");
  CHECK(kGameFields[22] == "drop");
  CHECK(kRobotFields[9] == "gripper");

  ActionFrame g = ActionFrame::zeros(ActionKind::game);
  CHECK(g.fields.size() == 25);
  CHECK_NOTHROW(g.validate());
  g.fields[24] = -3.5f;
  g.fields[4] = 1.0f;
  CHECK_NOTHROW(g.validate());
  g.fields[4] = 0.5f;
  CHECK_THROWS(g.validate());
  g.fields[4] = 0.0f;
  g.fields.pop_back();
  CHECK_THROWS(g.validate());

  ActionFrame robot = ActionFrame::zeros(ActionKind::robot);
  robot.fields[3] = 0.7f;
  CHECK_NOTHROW(robot.validate());
  robot.fields[0] = NAN;
  CHECK_THROWS(robot.validate());
  CHECK(action_kind_from_string("robot") == ActionKind::robot);
  CHECK_THROWS(action_kind_from_string("joystick"));
}

TEST_CASE("raw actions average down to latent frames") {
  Tensor raw({1, 8, 2});
  for (std::size_t i = 0; i < 16; ++i) raw[i] = static_cast<float>(i);
  const Tensor d = downsample_actions(raw, 4);
  REQUIRE(d.shape() == Shape{1, 2, 2});
  CHECK(d[0] == 3.0f);
  CHECK(d[1] == 4.0f);
  CHECK(d[2] == 11.0f);
  CHECK_THROWS(downsample_actions(Tensor({1, 7, 2}), 4));
}

TEST_CASE("config presets") {
  const ToyModelConfig def;
  CHECK_NOTHROW(def.validate());
  CHECK(def.rope == RopeBands{16, 8, 4, 4});
  CHECK(def.pool_size == 4);
  CHECK(def.window == std::optional<std::size_t>(24));

  const ToyModelConfig prod = ToyModelConfig::production();
  CHECK_NOTHROW(prod.validate());
  CHECK(prod.model_dim == 2048);
  CHECK(prod.layers == 28);
  CHECK(prod.heads == 16);
  CHECK(prod.head_dim == 128);
  CHECK(prod.rope == RopeBands{64, 32, 16, 16});
  CHECK(prod.hub_tokens == 8);
  CHECK(prod.pool_size == 4);

  const ToyModelConfig tiny = ToyModelConfig::tiny();
  CHECK_NOTHROW(tiny.validate());
  CHECK(tiny.model_dim <= 32);
  CHECK(tiny.layers == 2);

  ToyModelConfig bad = def;
  bad.model_dim = 65;
  CHECK_THROWS(bad.validate());
  bad = def;
  bad.rope.t = 14;
  CHECK_THROWS(bad.validate());
  bad = def;
  bad.pool_size = 6;
  CHECK_THROWS(bad.validate());

  CHECK(def.topology(2, 6, AttentionMode::causal_hub).K == 4);
  CHECK(def.topology(2, 6, AttentionMode::bidirectional).K == 0);
  CHECK(def.topology(2, 6, AttentionMode::causal_dense).K == 0);
}

TEST_CASE("shared action encoder") {
  const ToyModelConfig c;
  Model<float> m(c);
  m.initialize(1, InitStyle::dense);
  Tensor zero({1, 25}, 0.0f);
  const Tensor u0 = m.encode_actions(zero, nullptr);
  REQUIRE(u0.shape() == Shape{1, 64});
  const float golden[] = {0.04147714f, 0.0983908474f, -0.228915945f, -0.0774917006f, 0.102764368f, -0.148562863f};
  for (std::size_t i = 0; i < 6; ++i) CHECK(u0[i] == doctest::Approx(golden[i]).epsilon(1e-6));

  Tensor two({2, 25}, 0.0f);
  for (std::size_t f : {3, 11, 19}) two.at({0, f}) = two.at({1, f}) = 1.0f;
  two.at({0, 23}) = two.at({1, 23}) = 0.4f;
  const Tensor u = m.encode_actions(two, nullptr);
  CHECK(std::memcmp(u.row(0).data(), u.row(1).data(), 64 * sizeof(float)) == 0);

  // camera-only difference vanishes without the continuous branch
  Tensor cam = two;
  cam.at({1, 24}) = -2.0f;
  CHECK(m.encode_actions(cam, nullptr).row(0)[0] != m.encode_actions(cam, nullptr).row(1)[0]);
  m.params().cont_w.fill(0.0f);
  m.params().cont_b.fill(0.0f);
  const Tensor ablated = m.encode_actions(cam, nullptr);
  CHECK(std::memcmp(ablated.row(0).data(), ablated.row(1).data(), 64 * sizeof(float)) == 0);

  CHECK_THROWS_AS(m.encode_actions(Tensor({1, 24}), nullptr), ShapeError);
}

TEST_CASE("action bias reaches only its own agent's tokens before attention") {
  const ToyModelConfig c = ToyModelConfig::tiny();
  Model<double> m(c);
  m.initialize(2, InitStyle::dense);
  const SequenceInputs<double> in = inputs<double>(c, 3, 2, VertexAssignment{{0, 1, 2}}, 3);
  SequenceInputs<double> changed = in;
  for (std::size_t t = 0; t < 2; ++t) {
    for (std::size_t f = 0; f < 25; ++f) changed.actions.at({2, t, f}) = f < 23 ? 1.0 - in.actions.at({2, t, f}) : 3.0;
  }
  ForwardTape<double> a, b;
  m.forward(in, AttentionMode::causal_hub, &a);
  m.forward(changed, AttentionMode::causal_hub, &b);
  bool agent2_moved = false;
  for (std::size_t i = 0; i < a.batch.size(); ++i) {
    const auto& co = a.batch.coords[i];
    if (co.is_hub() || co.identity != 2) {
      CHECK(attn_row(a, i) == attn_row(b, i));
    } else {
      agent2_moved = agent2_moved || attn_row(a, i) != attn_row(b, i);
    }
  }
  CHECK(agent2_moved);

  // zero g: actions have no path into the first attention
  for (auto& l : m.params().layers) {
    l.act_w.fill(0.0);
    l.act_b.fill(0.0);
  }
  ForwardTape<double> z1, z2;
  m.forward(in, AttentionMode::causal_hub, &z1);
  m.forward(changed, AttentionMode::causal_hub, &z2);
  CHECK(z1.layers[0].mha.x == z2.layers[0].mha.x);
}

TEST_CASE("action bias is broadcast across spatial positions") {
  const ToyModelConfig c = ToyModelConfig::tiny();
  Model<double> m(c);
  m.initialize(4, InitStyle::dense);
  SequenceInputs<double> in = inputs<double>(c, 2, 2, VertexAssignment{{1, 0}}, 5);
  // give every cell of agent 1, frame 1 the same latent
  const std::size_t cells = c.height * c.width, C = c.latent_channels;
  for (std::size_t cell = 1; cell < cells; ++cell) {
    for (std::size_t ch = 0; ch < C; ++ch) {
      in.latents[((1 * 2 + 1) * cells + cell) * C + ch] = in.latents[((1 * 2 + 1) * cells) * C + ch];
    }
  }
  ForwardTape<double> tape;
  m.forward(in, AttentionMode::causal_hub, &tape);
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < tape.batch.size(); ++i) {
    if (tape.batch.coords[i].identity == 1 && tape.batch.coords[i].t == 1) rows.push_back(i);
  }
  REQUIRE(rows.size() == cells);
  for (std::size_t r : rows) CHECK(attn_row(tape, r) == attn_row(tape, rows[0]));
}

TEST_CASE("forward shape contract and errors") {
  const ToyModelConfig c;
  Model<float> m(c);
  m.initialize(1);
  const SequenceInputs<float> in = inputs<float>(c, 2, 6, VertexAssignment{{3, 1}}, 6);
  for (AttentionMode mode : {AttentionMode::causal_hub, AttentionMode::bidirectional, AttentionMode::causal_dense}) {
    const Tensor out = m.forward(in, mode);
    CHECK(out.shape() == Shape{2, 6, 2, 2, 4});
    for (float v : out.data()) CHECK(std::isfinite(v));
  }
  SequenceInputs<float> bad = in;
  bad.actions = Tensor({2, 5, 25});
  CHECK_THROWS_AS(m.forward(bad, AttentionMode::causal_hub), ShapeError);
  bad = in;
  bad.sigmas.pop_back();
  CHECK_THROWS(m.forward(bad, AttentionMode::causal_hub));
  bad = in;
  bad.latents = Tensor({2, 5, 2, 2, 4});
  CHECK_THROWS(m.forward(bad, AttentionMode::causal_hub));
  bad = in;
  bad.assignment = VertexAssignment{{1, 1}};
  CHECK_THROWS(m.forward(bad, AttentionMode::causal_hub));
  bad = in;
  bad.assignment = VertexAssignment{{0, 1, 2, 3, 4}};
  CHECK_THROWS(m.forward(bad, AttentionMode::causal_hub));
}

TEST_CASE("serial and parallel forwards agree bit-for-bit") {
  const ToyModelConfig c;
  Model<float> m(c);
  m.initialize(7);
  const SequenceInputs<float> in = inputs<float>(c, 3, 6, VertexAssignment{{2, 0, 1}}, 8);
  m.set_exec(Exec::serial);
  const Tensor a = m.forward(in, AttentionMode::causal_hub);
  m.set_exec(Exec::parallel);
  CHECK(m.forward(in, AttentionMode::causal_hub) == a);
}

TEST_CASE("block causality on the tiny config") {
  const ToyModelConfig c = ToyModelConfig::tiny();
  Model<double> m(c);
  m.initialize(9, InitStyle::dense);
  const SequenceInputs<double> in = inputs<double>(c, 3, 4, VertexAssignment{{1, 2, 0}}, 10);
  for (AttentionMode mode : {AttentionMode::causal_hub, AttentionMode::causal_dense}) {
    const ProbeReport r = causality_probe(m, in, mode);
    CHECK_MESSAGE(r.passed, r.detail);
    CHECK(r.probes > 0);
  }
}

TEST_CASE("joint agent permutation equivariance") {
  const ToyModelConfig c = ToyModelConfig::tiny();
  Model<float> m(c);
  m.initialize(11, InitStyle::dense);
  const SequenceInputs<float> in = inputs<float>(c, 3, 4, VertexAssignment{{0, 2, 1}}, 12);
  for (AttentionMode mode : {AttentionMode::causal_hub, AttentionMode::causal_dense, AttentionMode::bidirectional}) {
    for (const std::vector<std::size_t>& perm : {std::vector<std::size_t>{1, 0, 2}, {2, 0, 1}, {1, 2, 0}}) {
      const ProbeReport r = equivariance_probe(m, in, perm, mode);
      CHECK_MESSAGE(r.passed, r.detail);
    }
  }
}

TEST_CASE("canonical order and helpers") {
  CHECK(canonical_agent_order(VertexAssignment{{3, 0, 2}}) == std::vector<std::size_t>{1, 2, 0});
  const auto e = sigma_embedding(0.5, 8);
  REQUIRE(e.size() == 8);
  CHECK(e[0] == doctest::Approx(std::sin(500.0)));
  CHECK(e[1] == doctest::Approx(std::cos(500.0)));
  CHECK(gelu(0.0) == 0.0);
  CHECK(gelu(3.0) == doctest::Approx(2.99636).epsilon(1e-4));
  const double h = 1e-6;
  for (double x : {-2.0, -0.3, 0.0, 0.7, 2.5}) {
    CHECK(gelu_grad(x) == doctest::Approx((gelu(x + h) - gelu(x - h)) / (2 * h)).epsilon(1e-6));
  }
}

TEST_CASE("parameter visiting and arithmetic") {
  const ToyModelConfig c = ToyModelConfig::tiny();
  Model<double> m(c);
  m.initialize(1);
  std::size_t total = 0, groups = 0;
  m.params().visit([&](const std::string&, const Tensor64& t) {
    total += t.size();
    ++groups;
  });
  CHECK(total == m.params().count());
  CHECK(groups == 39);
  ModelParams<double> g = ModelParams<double>::zeros(c);
  g.fill(1.0);
  const double before = m.params().in_w[0];
  m.params().axpy(0.5, g);
  CHECK(m.params().in_w[0] == before + 0.5);
}

TEST_CASE("sampled gradient entries match finite differences") {
  const ToyModelConfig c = ToyModelConfig::tiny();
  Model<double> m(c);
  m.initialize(13, InitStyle::dense);
  const SequenceInputs<double> in = inputs<double>(c, 2, 2, VertexAssignment{{2, 1}}, 14);
  FlowExample<double> ex;
  ex.z0 = in.latents;
  ex.actions = in.actions;
  ex.sigmas = in.sigmas;
  ex.assignment = in.assignment;
  ex.eps = Tensor64(ex.z0.shape());
  RngStream r(15);
  for (auto& v : ex.eps.data()) v = r.normal();
  const std::vector<FlowExample<double>> batch{ex};
  ModelParams<double> grads;
  flow_matching_loss<double>(m, batch, &grads);
  std::vector<Tensor64*> ps, gs;
  m.params().visit([&](const std::string&, Tensor64& t) { ps.push_back(&t); });
  grads.visit([&](const std::string&, Tensor64& t) { gs.push_back(&t); });
  REQUIRE(ps.size() == gs.size());
  for (std::size_t k = 0; k < ps.size(); ++k) {
    for (std::size_t s = 0; s < 3; ++s) {
      const std::size_t i = r.uniform_int(ps[k]->size());
      double& x = (*ps[k])[i];
      const double x0 = x;
      x = x0 + 1e-5;
      const double lp = flow_matching_loss<double>(m, batch);
      x = x0 - 1e-5;
      const double lm = flow_matching_loss<double>(m, batch);
      x = x0;
      const double fd = (lp - lm) / 2e-5, an = (*gs[k])[i];
      CHECK(std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6}) <= 1e-3);
    }
  }
}

TEST_CASE("perfect prediction gives zero loss") {
  const ToyModelConfig c;
  Model<float> m(c);
  m.initialize(3);
  m.params().out_w.fill(0.0f);
  m.params().out_b.fill(0.0f);
  const SequenceInputs<float> in = inputs<float>(c, 2, 6, VertexAssignment{{0, 1}}, 16);
  FlowExample<float> ex;
  ex.z0 = ex.eps = in.latents;
  ex.actions = in.actions;
  ex.sigmas = in.sigmas;
  ex.assignment = in.assignment;
  const std::vector<FlowExample<float>> batch{ex};
  CHECK(flow_matching_loss<float>(m, batch) == 0.0);
}

TEST_CASE("loss is invariant under joint agent permutation") {
  const ToyModelConfig c;
  Model<float> m(c);
  m.initialize(5);
  const SequenceInputs<float> in = inputs<float>(c, 3, 6, VertexAssignment{{3, 0, 2}}, 17);
  FlowExample<float> ex;
  ex.z0 = in.latents;
  ex.actions = in.actions;
  ex.sigmas = in.sigmas;
  ex.assignment = in.assignment;
  ex.eps = Tensor(ex.z0.shape());
  RngStream r(18);
  for (auto& v : ex.eps.data()) v = static_cast<float>(r.normal());

  const std::vector<std::size_t> perm{2, 0, 1};
  auto permute = [&](const Tensor& t) {
    Tensor out(t.shape());
    const std::size_t s = t.size() / 3;
    for (std::size_t i = 0; i < 3; ++i) std::copy_n(t.data().begin() + perm[i] * s, s, out.data().begin() + i * s);
    return out;
  };
  FlowExample<float> px = ex;
  px.z0 = permute(ex.z0);
  px.eps = permute(ex.eps);
  px.actions = permute(ex.actions);
  for (std::size_t i = 0; i < 3; ++i) px.assignment.vertex[i] = ex.assignment.vertex[perm[i]];
  const std::vector<FlowExample<float>> a{ex}, b{px};
  CHECK(flow_matching_loss<float>(m, a) == flow_matching_loss<float>(m, b));
}
