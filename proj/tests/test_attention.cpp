#include <cmath>
#include <sstream>

#include "doctest.h"
#include "hubsim/attention.hpp"
#include "hubsim/errors.hpp"

using namespace hubsim;

namespace {

TopologySpec make(std::size_t P, std::size_t T, std::size_t H, std::size_t W, std::size_t K,
                  std::size_t n) {
  TopologySpec s;
  s.P = P;
  s.T = T;
  s.H = H;
  s.W = W;
  s.K = K;
  s.n = n;
  return s;
}

template <typename T = float>
BasicTensor<T> randn(Shape shape, RngStream& r) {
  BasicTensor<T> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<T>(r.normal());
  return t;
}

// Per-query loop oracle in double.
Tensor64 loop_attention(const Tensor& q, const Tensor& k, const Tensor& v, const MaskMatrix& m) {
  const std::size_t S = q.extent(0), d = q.extent(1);
  Tensor64 out({S, v.extent(1)}, 0.0);
  for (std::size_t i = 0; i < S; ++i) {
    std::vector<double> w(S, 0.0);
    double mx = -INFINITY, z = 0;
    for (std::size_t j = 0; j < S; ++j) {
      if (!m(i, j)) continue;
      double s = 0;
      for (std::size_t c = 0; c < d; ++c) s += double(q.at({i, c})) * k.at({j, c});
      w[j] = s / std::sqrt(double(d));
      mx = std::max(mx, w[j]);
    }
    for (std::size_t j = 0; j < S; ++j) {
      if (m(i, j)) z += (w[j] = std::exp(w[j] - mx));
    }
    for (std::size_t j = 0; j < S; ++j) {
      if (!m(i, j)) continue;
      for (std::size_t c = 0; c < v.extent(1); ++c) out.at({i, c}) += w[j] / z * v.at({j, c});
    }
  }
  return out;
}

AttentionWeights<float> random_weights(std::size_t heads, std::size_t head_dim, RngStream& r) {
  AttentionWeights<float> w;
  w.heads = heads;
  w.head_dim = head_dim;
  const std::size_t D = heads * head_dim;
  for (auto* m : {&w.wq, &w.wk, &w.wv, &w.wo}) {
    *m = randn<float>({D, D}, r);
    for (auto& x : m->data()) x /= std::sqrt(float(D));
  }
  return w;
}

// Agent p's rows of a full-sequence tensor.
Tensor agent_rows(const Tensor& x, const TopologySpec& s, std::size_t p) {
  const std::size_t rows = s.T * s.L(), d = x.extent(1);
  Tensor out({rows, d});
  std::copy_n(x.data().begin() + p * rows * d, rows * d, out.data().begin());
  return out;
}

}  // namespace

TEST_CASE("reference attention on trivial masks") {
  RngStream r(1);
  const Tensor q = randn({1, 4}, r), v = randn({1, 3}, r);
  CHECK(masked_attention_reference(q, q, v, MaskMatrix(1, 1, true)) == v);

  const Tensor q5 = randn({5, 4}, r), k5 = randn({5, 4}, r), v5 = randn({5, 3}, r);
  MaskMatrix diag(5, 5, false);
  for (std::size_t i = 0; i < 5; ++i) diag.set(i, i, true);
  CHECK(masked_attention_reference(q5, k5, v5, diag) == v5);
  MaskMatrix empty(5, 5, true);
  for (std::size_t j = 0; j < 5; ++j) empty.set(2, j, false);
  CHECK_THROWS_AS(masked_attention_reference(q5, k5, v5, empty), EmptyRowError);
}

TEST_CASE("reference attention matches a per-query loop") {
  RngStream r(2);
  const TopologySpec s = make(2, 2, 1, 2, 1, 1);
  const std::size_t S = s.sequence_length();
  const Tensor q = randn({S, 8}, r), k = randn({S, 8}, r), v = randn({S, 8}, r);
  const MaskMatrix m = causal_hub_mask(s);
  const Tensor out = masked_attention_reference(q, k, v, m);
  const Tensor64 ref = loop_attention(q, k, v, m);
  for (std::size_t i = 0; i < out.size(); ++i) CHECK(std::abs(out[i] - ref[i]) < 1e-5);
}

TEST_CASE("hub-free sparse attention is independent per agent") {
  RngStream r(3);
  const TopologySpec s = make(3, 2, 2, 1, 0, 1);
  const std::size_t S = s.sequence_length();
  const Tensor q = randn({S, 4}, r), k = randn({S, 4}, r), v = randn({S, 4}, r);
  const Tensor out = sparse_hub_attention(q, k, v, s);
  const TopologySpec one = make(1, 2, 2, 1, 0, 1);
  for (std::size_t p = 0; p < 3; ++p) {
    const Tensor solo =
        sparse_hub_attention(agent_rows(q, s, p), agent_rows(k, s, p), agent_rows(v, s, p), one);
    CHECK(agent_rows(out, s, p) == solo);
  }
}

TEST_CASE("single-agent sparse attention equals dense over stream and hubs") {
  RngStream r(4);
  const TopologySpec s = make(1, 4, 1, 2, 2, 2);
  const std::size_t S = s.sequence_length();
  const Tensor q = randn({S, 4}, r), k = randn({S, 4}, r), v = randn({S, 4}, r);
  const Tensor a = sparse_hub_attention(q, k, v, s);
  const Tensor b = masked_attention_reference(q, k, v, block_causal_mask(s));
  CHECK(max_abs_diff(a, b) < 1e-6);
}

TEST_CASE("sparse attention matches the dense oracle") {
  RngStream r(5);
  const TopologySpec s = make(4, 2, 2, 2, 2, 1);
  const std::size_t S = s.sequence_length();
  const Tensor q = randn({S, 8}, r), k = randn({S, 8}, r), v = randn({S, 8}, r);
  AttentionCounters counters;
  const Tensor a = sparse_hub_attention(q, k, v, s, Exec::parallel, &counters);
  const MaskMatrix m = causal_hub_mask(s);
  CHECK(max_abs_diff(a, masked_attention_reference(q, k, v, m)) < 1e-5);
  CHECK(counters.pairs == m.count());
  CHECK(sparse_hub_attention(q, k, v, s, Exec::serial) == a);
  CHECK_THROWS(sparse_hub_attention(randn({S - 1, 8}, r), k, v, s));
}

TEST_CASE("sparse attention agrees with the oracle in 64-bit over seeded specs") {
  RngStream root(6);
  const std::size_t Ks[] = {0, 1, 2, 8};
  const std::pair<std::size_t, std::size_t> grids[] = {{1, 1}, {1, 2}, {2, 2}, {2, 3}, {1, 6}};
  double worst = 0;
  for (int c = 0; c < 200; ++c) {
    RngStream r = root.split(c);
    TopologySpec s = make(1 + r.uniform_int(4), 1 + r.uniform_int(4), 1, 1, Ks[r.uniform_int(4)], 1);
    const auto g = grids[r.uniform_int(5)];
    s.H = g.first;
    s.W = g.second;
    if (s.T % 2 == 0 && r.uniform() < 0.5) s.n = 2;
    const std::size_t S = s.sequence_length();
    const Tensor64 q = randn<double>({S, 6}, r), k = randn<double>({S, 6}, r), v = randn<double>({S, 6}, r);
    worst = std::max(worst, max_abs_diff(sparse_hub_attention(q, k, v, s),
                                         masked_attention_reference(q, k, v, causal_hub_mask(s))));
  }
  CHECK(worst < 1e-10);
}

TEST_CASE("windowed sparse attention matches the composed mask") {
  RngStream r(7);
  TopologySpec s = make(2, 6, 1, 2, 1, 2);
  s.window = 4;
  const std::size_t S = s.sequence_length();
  const Tensor q = randn({S, 4}, r), k = randn({S, 4}, r), v = randn({S, 4}, r);
  const MaskMatrix m = mask_for_mode(s, AttentionMode::causal_hub);
  CHECK(max_abs_diff(sparse_hub_attention(q, k, v, s), masked_attention_reference(q, k, v, m)) < 1e-5);
  CHECK(plan_for_sequence(s, AttentionMode::causal_hub).to_mask() == m);
  CHECK(plan_for_sequence(s, AttentionMode::causal_dense).to_mask() ==
        mask_for_mode(s, AttentionMode::causal_dense));
  CHECK(plan_for_sequence(s, AttentionMode::bidirectional).to_mask() == all_true_mask(s));
}

TEST_CASE("permuting agent streams with the gather order permutes outputs exactly") {
  RngStream r(8);
  const TopologySpec s = make(3, 2, 1, 2, 2, 1);
  const std::size_t S = s.sequence_length(), rows = s.T * s.L(), d = 4;
  const Tensor q = randn({S, d}, r), k = randn({S, d}, r), v = randn({S, d}, r);
  const std::vector<std::size_t> perm{2, 0, 1};  // new agent i is old agent perm[i]
  std::vector<std::size_t> inverse(3);
  for (std::size_t i = 0; i < 3; ++i) inverse[perm[i]] = i;
  auto permute = [&](const Tensor& x) {
    Tensor y = x;
    for (std::size_t i = 0; i < 3; ++i) {
      std::copy_n(x.data().begin() + perm[i] * rows * d, rows * d, y.data().begin() + i * rows * d);
    }
    return y;
  };
  const std::vector<std::size_t> order{0, 1, 2};
  const Tensor base = sparse_hub_attention(q, k, v, s, Exec::parallel, nullptr, order);
  // the same physical streams visited in the same sequence
  const Tensor moved = sparse_hub_attention(permute(q), permute(k), permute(v), s, Exec::parallel,
                                            nullptr, inverse);
  CHECK(moved == permute(base));
}

TEST_CASE("multi-head attention") {
  RngStream r(9);
  const TopologySpec s = make(2, 2, 1, 2, 0, 1);
  const RopeLayout layout = RopeLayout::standard({4, 2, 2, 0});
  const SimplexPool zero_pool = build_simplex_pool(2, 1, 0.0);
  const VertexAssignment a = identity_assignment(2);
  const RopeInputs rope{&layout, &zero_pool, &a};
  const std::size_t S = s.sequence_length();

  AttentionWeights<float> zero;
  zero.heads = 1;
  zero.head_dim = 8;
  for (auto* m : {&zero.wq, &zero.wk, &zero.wv, &zero.wo}) *m = Tensor({8, 8}, 0.0f);
  const Tensor x = randn({S, 8}, r);
  const Tensor y0 = multi_head_attention(x, zero, s, rope);
  for (float y : y0.data()) CHECK(y == 0.0f);

  const AttentionWeights<float> w1 = random_weights(1, 8, r);
  Tensor same = x;
  std::copy_n(x.data().begin(), 4 * 8, same.data().begin() + 4 * 8);
  const Tensor out = multi_head_attention(same, w1, s, rope);
  CHECK(agent_rows(out, s, 0) == agent_rows(out, s, 1));

  const TopologySpec hubs = make(3, 4, 2, 2, 2, 2);
  const RopeLayout l2 = RopeLayout::standard({8, 4, 2, 2});
  const SimplexPool pool = build_simplex_pool(3, 2, 1.0);
  const VertexAssignment a3{{2, 0, 1}};
  const RopeInputs rope2{&l2, &pool, &a3};
  const AttentionWeights<float> w2 = random_weights(2, 16, r);
  const Tensor x2 = randn({hubs.sequence_length(), 32}, r);
  for (AttentionMode mode : {AttentionMode::causal_hub, AttentionMode::causal_dense, AttentionMode::bidirectional}) {
    CHECK(max_abs_diff(multi_head_attention(x2, w2, hubs, rope2, mode),
                       multi_head_attention_reference(x2, w2, hubs, rope2, mode)) < 1e-5);
  }
}

TEST_CASE("closed-form pair counts") {
  const TopologySpec small = make(2, 3, 2, 2, 2, 3);
  CHECK(block_pair_count(small, CostMode::dense) == 576);
  CHECK(block_pair_count(small, CostMode::sparse_hub) == 612);
  const TopologySpec eight = make(8, 3, 2, 2, 2, 3);
  CHECK(block_pair_count(eight, CostMode::dense) == 9216);
  CHECK(block_pair_count(eight, CostMode::sparse_hub) == 2340);
  for (std::size_t P = 1; P <= 6; ++P) {
    const TopologySpec s = make(P, 3, 2, 2, 0, 3);
    CHECK(block_pair_count(s, CostMode::sparse_hub) == P * 144);
  }
}

TEST_CASE("sparse pair count is affine in P") {
  std::vector<std::int64_t> c;
  for (std::size_t P = 1; P <= 10; ++P) {
    c.push_back(static_cast<std::int64_t>(block_pair_count(make(P, 6, 2, 3, 5, 3), CostMode::sparse_hub)));
  }
  for (std::size_t i = 2; i < c.size(); ++i) CHECK(c[i] - 2 * c[i - 1] + c[i - 2] == 0);
}

TEST_CASE("cost report") {
  TopologySpec s = make(8, 24, 2, 2, 2, 3);
  const CostReport r = attention_cost(s, CostMode::sparse_hub, 2, 32);
  CHECK(r.pairs == 2340);
  CHECK(r.flops == 2340.0 * 4 * 32 * 2 * 8);
  CHECK(CostReport::csv_header() == "mode,P,T,L,K,n,pairs,flops");
  CHECK(r.csv_row() == "sparse-hub,8,24,4,2,3,2340,4792320");
  CHECK(cost_mode_from_string("dense") == CostMode::dense);
  CHECK_THROWS(cost_mode_from_string("banded"));
  s.window = 6;
  CHECK(visible_pair_count(s, CostMode::dense, 0) == 9216);
  CHECK(visible_pair_count(s, CostMode::dense, 5) == 2 * 9216);
}

TEST_CASE("plan pair count equals kernel counters") {
  RngStream r(10);
  const TopologySpec s = make(3, 4, 1, 2, 2, 2);
  const AttentionPlan plan = plan_for_sequence(s, AttentionMode::causal_hub);
  const std::size_t S = s.sequence_length();
  const Tensor q = randn({S, 4}, r), k = randn({S, 4}, r), v = randn({S, 4}, r);
  Tensor out({S, 4});
  AttentionCounters c;
  attention_forward<float>({q.data().data(), k.data().data(), v.data().data(), out.data().data(), 4, 4, 4, 4},
                           plan, Exec::serial, &c);
  CHECK(c.pairs == plan.pair_count());
  CHECK(c.pairs == causal_hub_mask(s).count());
  CHECK(c.calls == 1);
}
