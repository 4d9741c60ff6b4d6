#include "hubsim/attention.hpp"

#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "hubsim/errors.hpp"

namespace hubsim {

const char* to_string(AttentionMode mode) {
  switch (mode) {
    case AttentionMode::causal_hub: return "causal-hub";
    case AttentionMode::causal_dense: return "causal-dense";
    case AttentionMode::bidirectional: return "bidirectional-dense";
  }
  return "?";
}

AttentionMode attention_mode_from_string(const std::string& s) {
  if (s == "causal-hub" || s == "sparse-hub") return AttentionMode::causal_hub;
  if (s == "causal-dense" || s == "dense") return AttentionMode::causal_dense;
  if (s == "bidirectional-dense" || s == "bidirectional") return AttentionMode::bidirectional;
  throw std::invalid_argument("unknown attention mode '" + s + "'");
}

AttentionPlan::AttentionPlan(std::size_t num_keys) : num_keys_(num_keys) {}

void AttentionPlan::add_query() { offsets_.push_back(ranges_.size()); }

void AttentionPlan::add_range(std::size_t begin, std::size_t end) {
  if (offsets_.size() < 2) throw std::logic_error("AttentionPlan: add_query before add_range");
  if (end > num_keys_ || begin > end) throw std::out_of_range("AttentionPlan: range outside keys");
  if (begin == end) return;
  ranges_.push_back({static_cast<std::uint32_t>(begin), static_cast<std::uint32_t>(end)});
  offsets_.back() = ranges_.size();
}

std::size_t AttentionPlan::keys_of(std::size_t q) const {
  std::size_t n = 0;
  for (const auto& r : ranges(q)) n += r.size();
  return n;
}

std::size_t AttentionPlan::max_keys_per_query() const {
  std::size_t m = 0;
  for (std::size_t q = 0; q < queries(); ++q) m = std::max(m, keys_of(q));
  return m;
}

std::uint64_t AttentionPlan::pair_count() const {
  std::uint64_t n = 0;
  for (const auto& r : ranges_) n += r.size();
  return n;
}

BoolMatrix AttentionPlan::to_mask() const {
  BoolMatrix m(queries(), num_keys_);
  for (std::size_t q = 0; q < queries(); ++q) {
    for (const auto& r : ranges(q)) {
      for (std::size_t j = r.begin; j < r.end; ++j) m.set(q, j, true);
    }
  }
  return m;
}

AttentionPlan plan_for_sequence(const TopologySpec& spec, AttentionMode mode,
                                std::span<const std::size_t> agent_order) {
  spec.validate();
  std::vector<std::size_t> order(agent_order.begin(), agent_order.end());
  if (order.empty()) {
    order.resize(spec.P);
    std::iota(order.begin(), order.end(), std::size_t{0});
  }
  if (order.size() != spec.P) throw std::invalid_argument("agent order length differs from P");

  const std::size_t S = spec.sequence_length();
  const std::size_t L = spec.L();
  const std::size_t A = spec.agent_tokens();
  const std::size_t wb = spec.window_blocks();
  AttentionPlan plan(S);

  auto agent_range = [&](std::size_t p, std::size_t f0, std::size_t f1) {
    plan.add_range(p * spec.T * L + f0 * L, p * spec.T * L + f1 * L);
  };
  auto hub_range = [&](std::size_t f0, std::size_t f1) {
    plan.add_range(A + f0 * spec.K, A + f1 * spec.K);
  };

  for (std::size_t i = 0; i < S; ++i) {
    plan.add_query();
    if (mode == AttentionMode::bidirectional) {
      for (std::size_t p : order) agent_range(p, 0, spec.T);
      hub_range(0, spec.T);
      continue;
    }
    const TokenCoordinate c = token_coordinate(spec, i);
    const std::size_t lo_block = c.block + 1 >= wb ? c.block + 1 - wb : 0;
    const std::size_t f0 = lo_block * spec.n;
    const std::size_t f1 = (c.block + 1) * spec.n;
    if (mode == AttentionMode::causal_dense || c.is_hub()) {
      for (std::size_t p : order) agent_range(p, f0, f1);
    } else {
      agent_range(static_cast<std::size_t>(c.identity), f0, f1);
    }
    hub_range(f0, f1);
  }
  return plan;
}

namespace {

template <typename T>
inline T dot(const T* a, const T* b, std::size_t n) {
  T s{0};
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

template <typename T>
void attend_one(const AttentionIO<T>& io, const AttentionPlan& plan, std::size_t i,
                std::vector<T>& scratch) {
  const T scale = T{1} / std::sqrt(static_cast<T>(io.dim));
  const T* qi = io.q + i * io.q_stride;
  T* oi = io.out + i * io.out_stride;
  const auto ranges = plan.ranges(i);
  std::size_t nk = 0;
  T mx = -std::numeric_limits<T>::infinity();
  for (const auto& r : ranges) {
    for (std::size_t j = r.begin; j < r.end; ++j) {
      const T s = dot(qi, io.k + j * io.kv_stride, io.dim) * scale;
      scratch[nk++] = s;
      mx = std::max(mx, s);
    }
  }
  if (nk == 0) {
    throw EmptyRowError(i, "attention: query " + std::to_string(i) + " has no admissible key");
  }
  T sum{0};
  for (std::size_t t = 0; t < nk; ++t) {
    scratch[t] = std::exp(scratch[t] - mx);
    sum += scratch[t];
  }
  const T inv = T{1} / sum;
  for (std::size_t t = 0; t < nk; ++t) scratch[t] *= inv;
  for (std::size_t c = 0; c < io.dim; ++c) oi[c] = T{0};
  std::size_t t = 0;
  for (const auto& r : ranges) {
    for (std::size_t j = r.begin; j < r.end; ++j, ++t) {
      const T p = scratch[t];
      const T* vj = io.v + j * io.kv_stride;
      for (std::size_t c = 0; c < io.dim; ++c) oi[c] += p * vj[c];
    }
  }
  if (io.lse) io.lse[i] = mx + std::log(sum);
}

}  // namespace

template <typename T>
void attention_forward(const AttentionIO<T>& io, const AttentionPlan& plan, Exec exec,
                       AttentionCounters* counters) {
  const auto start = std::chrono::steady_clock::now();
  const std::size_t nq = plan.queries();
  const std::size_t scratch_size = plan.max_keys_per_query();
  const auto rows = static_cast<std::int64_t>(nq);
  std::uint64_t pairs = 0;
  const bool parallel = exec == Exec::parallel && !omp_in_parallel() && nq > 1;
  if (parallel) {
    // Exceptions cannot cross the OpenMP region boundary.
    std::int64_t bad = -1;
#pragma omp parallel reduction(+ : pairs)
    {
      std::vector<T> scratch(scratch_size);
#pragma omp for schedule(static)
      for (std::int64_t i = 0; i < rows; ++i) {
        const auto q = static_cast<std::size_t>(i);
        const std::size_t nk = plan.keys_of(q);
        if (nk == 0) {
#pragma omp critical
          bad = i;
          continue;
        }
        attend_one(io, plan, q, scratch);
        pairs += nk;
      }
    }
    if (bad >= 0) {
      throw EmptyRowError(static_cast<std::size_t>(bad),
                          "attention: query " + std::to_string(bad) + " has no admissible key");
    }
  } else {
    std::vector<T> scratch(scratch_size);
    for (std::int64_t i = 0; i < rows; ++i) {
      attend_one(io, plan, static_cast<std::size_t>(i), scratch);
      pairs += plan.keys_of(static_cast<std::size_t>(i));
    }
  }
  if (counters) {
    counters->pairs += pairs;
    counters->calls += 1;
    counters->nanoseconds += static_cast<std::uint64_t>(
        std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::steady_clock::now() -
                                                             start)
            .count());
  }
}

template <typename T>
void attention_backward(const AttentionIO<T>& io, const AttentionPlan& plan, const T* d_out,
                        T* dq, T* dk, T* dv) {
  if (!io.lse) throw std::logic_error("attention_backward needs the forward log-sum-exp");
  const T scale = T{1} / std::sqrt(static_cast<T>(io.dim));
  std::vector<T> probs(plan.max_keys_per_query());
  std::vector<T> dprobs(probs.size());
  for (std::size_t i = 0; i < plan.queries(); ++i) {
    const T* qi = io.q + i * io.q_stride;
    const T* doi = d_out + i * io.out_stride;
    const T* oi = io.out + i * io.out_stride;
    T* dqi = dq + i * io.q_stride;
    const auto ranges = plan.ranges(i);
    std::size_t t = 0;
    for (const auto& r : ranges) {
      for (std::size_t j = r.begin; j < r.end; ++j, ++t) {
        const T s = dot(qi, io.k + j * io.kv_stride, io.dim) * scale;
        probs[t] = std::exp(s - io.lse[i]);
        dprobs[t] = dot(doi, io.v + j * io.kv_stride, io.dim);
      }
    }
    const T delta = dot(doi, oi, io.dim);
    t = 0;
    for (const auto& r : ranges) {
      for (std::size_t j = r.begin; j < r.end; ++j, ++t) {
        const T p = probs[t];
        const T ds = p * (dprobs[t] - delta) * scale;
        const T* kj = io.k + j * io.kv_stride;
        T* dkj = dk + j * io.kv_stride;
        T* dvj = dv + j * io.kv_stride;
        for (std::size_t c = 0; c < io.dim; ++c) {
          dqi[c] += ds * kj[c];
          dkj[c] += ds * qi[c];
          dvj[c] += p * doi[c];
        }
      }
    }
  }
}

template <typename T>
BasicTensor<T> masked_attention_reference(const BasicTensor<T>& q, const BasicTensor<T>& k,
                                          const BasicTensor<T>& v, const MaskMatrix& mask) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2 || q.extent(1) != k.extent(1) ||
      k.extent(0) != v.extent(0)) {
    throw ShapeError("masked_attention_reference: q " + shape_to_string(q.shape()) + ", k " +
                     shape_to_string(k.shape()) + ", v " + shape_to_string(v.shape()));
  }
  if (mask.rows() != q.extent(0) || mask.cols() != k.extent(0)) {
    throw ShapeError("masked_attention_reference: mask dimensions do not match q/k");
  }
  const std::size_t d = q.extent(1);
  BasicTensor<T> kt({d, k.extent(0)});
  for (std::size_t j = 0; j < k.extent(0); ++j) {
    for (std::size_t c = 0; c < d; ++c) kt[c * k.extent(0) + j] = k[j * d + c];
  }
  BasicTensor<T> logits = matmul(q, kt, Exec::serial);
  const T scale = T{1} / std::sqrt(static_cast<T>(d));
  for (auto& x : logits.data()) x *= scale;
  return matmul(softmax_masked(logits, mask), v, Exec::serial);
}

template <typename T>
BasicTensor<T> sparse_hub_attention(const BasicTensor<T>& q, const BasicTensor<T>& k,
                                    const BasicTensor<T>& v, const TopologySpec& spec, Exec exec,
                                    AttentionCounters* counters,
                                    std::span<const std::size_t> agent_order) {
  const std::size_t S = spec.sequence_length();
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2 || q.extent(0) != S || k.extent(0) != S ||
      v.extent(0) != S || q.extent(1) != k.extent(1) || v.extent(1) != q.extent(1)) {
    throw ShapeError("sparse_hub_attention: layout for " + spec.describe() + " has " +
                     std::to_string(S) + " tokens; got q " + shape_to_string(q.shape()) + ", k " +
                     shape_to_string(k.shape()) + ", v " + shape_to_string(v.shape()));
  }
  const AttentionPlan plan = plan_for_sequence(spec, AttentionMode::causal_hub, agent_order);
  BasicTensor<T> out({S, v.extent(1)});
  AttentionIO<T> io;
  io.q = q.data().data();
  io.k = k.data().data();
  io.v = v.data().data();
  io.out = out.data().data();
  io.q_stride = io.kv_stride = io.out_stride = q.extent(1);
  io.dim = q.extent(1);
  attention_forward(io, plan, exec, counters);
  return out;
}

template <typename T>
void AttentionWeights<T>::validate() const {
  const std::size_t D = model_dim();
  for (const auto* m : {&wq, &wk, &wv, &wo}) {
    if (m->shape() != Shape{D, D}) {
      throw ShapeError("attention weights must be " + std::to_string(D) + "x" + std::to_string(D) +
                       ", got " + shape_to_string(m->shape()));
    }
  }
}

namespace {

template <typename T>
void project(const BasicTensor<T>& x, const BasicTensor<T>& w, BasicTensor<T>& out, Exec exec) {
  const std::size_t S = x.extent(0);
  const std::size_t D = x.extent(1);
  const std::size_t O = w.extent(1);
  out = BasicTensor<T>({S, O});
  kernels::gemm<T>(x.data(), w.data(), out.data(), S, D, O, false, exec);
}

template <typename T>
void rotate_heads(BasicTensor<T>& m, const Tensor64& angles, std::size_t heads,
                  std::size_t head_dim, int sign) {
  const std::size_t S = m.extent(0);
  for (std::size_t i = 0; i < S; ++i) {
    auto row = m.row(i);
    auto a = angles.row(i);
    for (std::size_t h = 0; h < heads; ++h) {
      apply_rotary_inplace<T>(row.subspan(h * head_dim, head_dim), a, sign);
    }
  }
}

}  // namespace

template <typename T>
BasicTensor<T> mha_forward(const BasicTensor<T>& x, const AttentionWeights<T>& w,
                           const AttentionPlan& plan, const Tensor64& angles, Exec exec,
                           MhaTape<T>* tape, AttentionCounters* counters, KvContext<T>* context,
                           KvCapture<T>* capture) {
  const std::size_t S = x.extent(0);
  const std::size_t D = w.model_dim();
  if (x.rank() != 2 || x.extent(1) != D) {
    throw ShapeError("mha_forward: x " + shape_to_string(x.shape()) + " for model dim " +
                     std::to_string(D));
  }
  if (angles.rank() != 2 || angles.extent(0) != S || angles.extent(1) * 2 > w.head_dim) {
    throw ShapeError("mha_forward: angle table " + shape_to_string(angles.shape()) + " for " +
                     std::to_string(S) + " tokens of head dim " + std::to_string(w.head_dim));
  }
  if (plan.queries() != S) throw ShapeError("mha_forward: plan/query count mismatch");

  BasicTensor<T> q, k, v;
  project(x, w.wq, q, exec);
  project(x, w.wk, k, exec);
  project(x, w.wv, v, exec);
  rotate_heads(q, angles, w.heads, w.head_dim, 1);
  rotate_heads(k, angles, w.heads, w.head_dim, 1);

  if (capture) {
    capture->keys = k;
    capture->values = v;
  }

  const BasicTensor<T>* keys = &k;
  const BasicTensor<T>* values = &v;
  if (context) {
    if (context->slots.size() != S || context->keys.rank() != 2 || context->keys.extent(1) != D ||
        context->values.shape() != context->keys.shape()) {
      throw ShapeError("mha_forward: malformed key/value context");
    }
    for (std::size_t i = 0; i < S; ++i) {
      std::copy(k.row(i).begin(), k.row(i).end(), context->keys.row(context->slots[i]).begin());
      std::copy(v.row(i).begin(), v.row(i).end(), context->values.row(context->slots[i]).begin());
    }
    keys = &context->keys;
    values = &context->values;
  }
  if (plan.keys() != keys->extent(0)) throw ShapeError("mha_forward: plan/key count mismatch");

  BasicTensor<T> ctx({S, D});
  std::vector<T> lse(tape ? w.heads * S : 0);
  for (std::size_t h = 0; h < w.heads; ++h) {
    AttentionIO<T> io;
    io.q = q.data().data() + h * w.head_dim;
    io.k = keys->data().data() + h * w.head_dim;
    io.v = values->data().data() + h * w.head_dim;
    io.out = ctx.data().data() + h * w.head_dim;
    io.q_stride = io.kv_stride = io.out_stride = D;
    io.dim = w.head_dim;
    io.lse = tape ? lse.data() + h * S : nullptr;
    attention_forward(io, plan, exec, counters);
  }

  BasicTensor<T> y;
  project(ctx, w.wo, y, exec);
  if (tape) {
    if (context) throw std::logic_error("mha_forward: backward through a cache is unsupported");
    tape->x = x;
    tape->q = std::move(q);
    tape->k = std::move(k);
    tape->v = std::move(v);
    tape->ctx = std::move(ctx);
    tape->lse = std::move(lse);
    tape->plan = &plan;
    tape->angles = &angles;
  }
  return y;
}

template <typename T>
BasicTensor<T> mha_backward(const MhaTape<T>& tape, const AttentionWeights<T>& w,
                            const BasicTensor<T>& dy, AttentionGrads<T>& grads, Exec exec) {
  const std::size_t S = tape.x.extent(0);
  const std::size_t D = w.model_dim();
  for (auto* g : {&grads.wq, &grads.wk, &grads.wv, &grads.wo}) {
    if (g->shape() != Shape{D, D}) *g = BasicTensor<T>({D, D}, T{0});
  }
  // y = ctx * wo
  kernels::gemm_tn_acc<T>(tape.ctx.data(), dy.data(), grads.wo.data(), S, D, D, exec);
  BasicTensor<T> dctx({S, D});
  kernels::gemm_nt<T>(dy.data(), w.wo.data(), dctx.data(), S, D, D, false, exec);

  BasicTensor<T> dq({S, D}, T{0}), dk({S, D}, T{0}), dv({S, D}, T{0});
  for (std::size_t h = 0; h < w.heads; ++h) {
    AttentionIO<T> io;
    io.q = tape.q.data().data() + h * w.head_dim;
    io.k = tape.k.data().data() + h * w.head_dim;
    io.v = tape.v.data().data() + h * w.head_dim;
    io.out = const_cast<T*>(tape.ctx.data().data()) + h * w.head_dim;
    io.q_stride = io.kv_stride = io.out_stride = D;
    io.dim = w.head_dim;
    io.lse = const_cast<T*>(tape.lse.data()) + h * S;
    attention_backward(io, *tape.plan, dctx.data().data() + h * w.head_dim,
                       dq.data().data() + h * w.head_dim, dk.data().data() + h * w.head_dim,
                       dv.data().data() + h * w.head_dim);
  }
  // Rotation is orthogonal: pull the gradient back with the inverse angle.
  rotate_heads(dq, *tape.angles, w.heads, w.head_dim, -1);
  rotate_heads(dk, *tape.angles, w.heads, w.head_dim, -1);

  kernels::gemm_tn_acc<T>(tape.x.data(), dq.data(), grads.wq.data(), S, D, D, exec);
  kernels::gemm_tn_acc<T>(tape.x.data(), dk.data(), grads.wk.data(), S, D, D, exec);
  kernels::gemm_tn_acc<T>(tape.x.data(), dv.data(), grads.wv.data(), S, D, D, exec);
  BasicTensor<T> dx({S, D});
  kernels::gemm_nt<T>(dq.data(), w.wq.data(), dx.data(), S, D, D, false, exec);
  kernels::gemm_nt<T>(dk.data(), w.wk.data(), dx.data(), S, D, D, true, exec);
  kernels::gemm_nt<T>(dv.data(), w.wv.data(), dx.data(), S, D, D, true, exec);
  return dx;
}

MaskMatrix mask_for_mode(const TopologySpec& spec, AttentionMode mode) {
  switch (mode) {
    case AttentionMode::bidirectional: return all_true_mask(spec);
    case AttentionMode::causal_hub:
      if (spec.window) return compose_masks({causal_hub_mask(spec), local_window_mask(spec)}, &spec);
      return causal_hub_mask(spec);
    case AttentionMode::causal_dense:
      if (spec.window) return local_window_mask(spec);
      return block_causal_mask(spec);
  }
  throw std::logic_error("unknown attention mode");
}

namespace {

Tensor64 angles_padded(const Tensor64& angles, std::size_t head_dim) {
  Tensor64 out({angles.extent(0), head_dim / 2}, 0.0);
  for (std::size_t i = 0; i < angles.extent(0); ++i) {
    std::copy(angles.row(i).begin(), angles.row(i).end(), out.row(i).begin());
  }
  return out;
}

template <typename T>
Tensor64 angles_for(const TopologySpec& spec, const RopeInputs& rope) {
  if (!rope.layout || !rope.pool || !rope.assignment) {
    throw std::invalid_argument("multi_head_attention: rope inputs are incomplete");
  }
  const auto coords = build_layout(spec);
  return rope_table(*rope.layout, *rope.pool, *rope.assignment, coords, spec.extent());
}

}  // namespace

template <typename T>
BasicTensor<T> multi_head_attention(const BasicTensor<T>& x, const AttentionWeights<T>& w,
                                    const TopologySpec& spec, const RopeInputs& rope,
                                    AttentionMode mode, Exec exec) {
  w.validate();
  if (x.rank() != 2 || x.extent(0) != spec.sequence_length()) {
    throw ShapeError("multi_head_attention: x " + shape_to_string(x.shape()) + " for " +
                     spec.describe());
  }
  const Tensor64 angles = angles_for<T>(spec, rope);
  const AttentionPlan plan = plan_for_sequence(spec, mode);
  return mha_forward(x, w, plan, angles, exec);
}

template <typename T>
BasicTensor<T> multi_head_attention_reference(const BasicTensor<T>& x,
                                              const AttentionWeights<T>& w,
                                              const TopologySpec& spec, const RopeInputs& rope,
                                              AttentionMode mode) {
  w.validate();
  const std::size_t S = spec.sequence_length();
  const std::size_t D = w.model_dim();
  const Tensor64 angles = angles_for<T>(spec, rope);
  const MaskMatrix mask = mask_for_mode(spec, mode);
  const BasicTensor<T> q = matmul(x, w.wq, Exec::serial);
  const BasicTensor<T> k = matmul(x, w.wk, Exec::serial);
  const BasicTensor<T> v = matmul(x, w.wv, Exec::serial);
  BasicTensor<T> ctx({S, D});
  for (std::size_t h = 0; h < w.heads; ++h) {
    BasicTensor<T> qh({S, w.head_dim}), kh({S, w.head_dim}), vh({S, w.head_dim});
    for (std::size_t i = 0; i < S; ++i) {
      for (std::size_t c = 0; c < w.head_dim; ++c) {
        qh[i * w.head_dim + c] = q[i * D + h * w.head_dim + c];
        kh[i * w.head_dim + c] = k[i * D + h * w.head_dim + c];
        vh[i * w.head_dim + c] = v[i * D + h * w.head_dim + c];
      }
    }
    qh = apply_rotary(qh, angles_padded(angles, w.head_dim));
    kh = apply_rotary(kh, angles_padded(angles, w.head_dim));
    const BasicTensor<T> oh = masked_attention_reference(qh, kh, vh, mask);
    for (std::size_t i = 0; i < S; ++i) {
      for (std::size_t c = 0; c < w.head_dim; ++c) {
        ctx[i * D + h * w.head_dim + c] = oh[i * w.head_dim + c];
      }
    }
  }
  return matmul(ctx, w.wo, Exec::serial);
}

// ---------------------------------------------------------------------------

const char* to_string(CostMode mode) { return mode == CostMode::dense ? "dense" : "sparse-hub"; }

CostMode cost_mode_from_string(const std::string& s) {
  if (s == "dense") return CostMode::dense;
  if (s == "sparse-hub" || s == "sparse" || s == "hub") return CostMode::sparse_hub;
  throw std::invalid_argument("unknown cost mode '" + s + "'");
}

std::string CostReport::csv_header() { return "mode,P,T,L,K,n,pairs,flops"; }

std::string CostReport::csv_row() const {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.0f", flops);
  return std::string(to_string(mode)) + "," + std::to_string(P) + "," + std::to_string(T) + "," +
         std::to_string(L) + "," + std::to_string(K) + "," + std::to_string(n) + "," +
         std::to_string(pairs) + "," + buf;
}

std::uint64_t block_pair_count(const TopologySpec& spec, CostMode mode) {
  const std::uint64_t P = spec.P;
  const std::uint64_t nL = spec.n * spec.L();
  const std::uint64_t nK = spec.n * spec.K;
  if (mode == CostMode::dense) return P * P * nL * nL;
  return P * nL * (nL + nK) + nK * (P * nL + nK);
}

CostReport attention_cost(const TopologySpec& spec, CostMode mode, std::size_t heads,
                          std::size_t head_dim) {
  spec.validate();
  CostReport r;
  r.mode = mode;
  r.P = spec.P;
  r.T = spec.T;
  r.L = spec.L();
  r.K = spec.K;
  r.n = spec.n;
  r.heads = heads;
  r.head_dim = head_dim;
  r.pairs = block_pair_count(spec, mode);
  r.flops = static_cast<double>(r.pairs) * 4.0 * static_cast<double>(head_dim) *
            static_cast<double>(heads) * static_cast<double>(spec.blocks());
  return r;
}

std::uint64_t visible_pair_count(const TopologySpec& spec, CostMode mode, std::size_t block) {
  const std::size_t visible = std::min(block + 1, spec.window_blocks());
  return static_cast<std::uint64_t>(visible) * block_pair_count(spec, mode);
}

// ---------------------------------------------------------------------------

#define HUBSIM_ATTN(T)                                                                             \
  template void attention_forward<T>(const AttentionIO<T>&, const AttentionPlan&, Exec,            \
                                     AttentionCounters*);                                          \
  template void attention_backward<T>(const AttentionIO<T>&, const AttentionPlan&, const T*, T*,   \
                                      T*, T*);                                                     \
  template BasicTensor<T> masked_attention_reference(const BasicTensor<T>&, const BasicTensor<T>&, \
                                                     const BasicTensor<T>&, const MaskMatrix&);    \
  template BasicTensor<T> sparse_hub_attention(const BasicTensor<T>&, const BasicTensor<T>&,       \
                                               const BasicTensor<T>&, const TopologySpec&, Exec,   \
                                               AttentionCounters*, std::span<const std::size_t>);  \
  template struct AttentionWeights<T>;                                                             \
  template BasicTensor<T> mha_forward(const BasicTensor<T>&, const AttentionWeights<T>&,           \
                                      const AttentionPlan&, const Tensor64&, Exec, MhaTape<T>*,    \
                                      AttentionCounters*, KvContext<T>*, KvCapture<T>*);           \
  template BasicTensor<T> mha_backward(const MhaTape<T>&, const AttentionWeights<T>&,              \
                                       const BasicTensor<T>&, AttentionGrads<T>&, Exec);           \
  template BasicTensor<T> multi_head_attention(const BasicTensor<T>&, const AttentionWeights<T>&,  \
                                               const TopologySpec&, const RopeInputs&,             \
                                               AttentionMode, Exec);                               \
  template BasicTensor<T> multi_head_attention_reference(                                          \
      const BasicTensor<T>&, const AttentionWeights<T>&, const TopologySpec&, const RopeInputs&,   \
      AttentionMode);

HUBSIM_ATTN(float)
HUBSIM_ATTN(double)
#undef HUBSIM_ATTN

}  // namespace hubsim
