#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hubsim/kernels.hpp"
#include "hubsim/ops.hpp"
#include "hubsim/rope.hpp"
#include "hubsim/tensor.hpp"
#include "hubsim/topology.hpp"

namespace hubsim {

enum class AttentionMode {
  causal_hub,     // block-causal, agents see own stream + hubs, hubs see all
  causal_dense,   // block-causal, every token sees every token (dense baseline)
  bidirectional,  // all-true mask
};

const char* to_string(AttentionMode mode);
AttentionMode attention_mode_from_string(const std::string& s);

struct KeyRange {
  std::uint32_t begin = 0;
  std::uint32_t end = 0;
  std::size_t size() const { return end - begin; }
};

// Key sets per query as lists of contiguous ranges over the key buffer.
// Ranges are visited in list order, which fixes the reduction order.
class AttentionPlan {
 public:
  explicit AttentionPlan(std::size_t num_keys = 0);

  void add_query();
  // Appends a range to the most recent query; empty ranges are dropped.
  void add_range(std::size_t begin, std::size_t end);

  std::size_t queries() const { return offsets_.size() - 1; }
  std::size_t keys() const { return num_keys_; }
  std::span<const KeyRange> ranges(std::size_t q) const {
    return {ranges_.data() + offsets_[q], offsets_[q + 1] - offsets_[q]};
  }
  std::size_t keys_of(std::size_t q) const;
  std::size_t max_keys_per_query() const;
  std::uint64_t pair_count() const;
  BoolMatrix to_mask() const;

 private:
  std::size_t num_keys_;
  std::vector<std::size_t> offsets_{0};
  std::vector<KeyRange> ranges_;
};

// Plan over a full token sequence laid out by build_layout. Agent segments
// gathered by hub queries (and by every query in the dense modes) are visited
// in agent_order; the identity order is used when it is empty.
AttentionPlan plan_for_sequence(const TopologySpec& spec, AttentionMode mode,
                                std::span<const std::size_t> agent_order = {});

// Instrumentation filled by the kernels.
struct AttentionCounters {
  std::uint64_t pairs = 0;
  std::uint64_t calls = 0;
  std::uint64_t nanoseconds = 0;
  void reset() { *this = {}; }
};

// Strided single-head views: row r of q lives at q + r * q_stride.
template <typename T>
struct AttentionIO {
  const T* q = nullptr;
  const T* k = nullptr;
  const T* v = nullptr;
  T* out = nullptr;
  std::size_t q_stride = 0;
  std::size_t kv_stride = 0;
  std::size_t out_stride = 0;
  std::size_t dim = 0;
  T* lse = nullptr;  // optional per-query log-sum-exp, for backward
};

// out_i = sum_j softmax_j(q_i . k_j / sqrt(dim)) v_j over the plan's keys.
// Parallel over queries; each query's reduction order is fixed by the plan.
template <typename T>
void attention_forward(const AttentionIO<T>& io, const AttentionPlan& plan, Exec exec,
                       AttentionCounters* counters = nullptr);

// Accumulates dq, dk, dv (same strides as q, k, v) given d_out.
template <typename T>
void attention_backward(const AttentionIO<T>& io, const AttentionPlan& plan, const T* d_out,
                        T* dq, T* dk, T* dv);

// Serial oracle: scaled dot-product attention through a dense mask and
// softmax_masked. q, k: (S x d); v: (S x dv).
template <typename T>
BasicTensor<T> masked_attention_reference(const BasicTensor<T>& q, const BasicTensor<T>& k,
                                          const BasicTensor<T>& v, const MaskMatrix& mask);

// Sparse hub attention for a single head over a full sequence. Never touches
// a key outside the query's own stream, the hubs, and the visible blocks.
template <typename T>
BasicTensor<T> sparse_hub_attention(const BasicTensor<T>& q, const BasicTensor<T>& k,
                                    const BasicTensor<T>& v, const TopologySpec& spec,
                                    Exec exec = Exec::parallel,
                                    AttentionCounters* counters = nullptr,
                                    std::span<const std::size_t> agent_order = {});

// ---------------------------------------------------------------------------
// Multi-head attention with rotary q/k.

template <typename T>
struct AttentionWeights {
  std::size_t heads = 1;
  std::size_t head_dim = 0;
  BasicTensor<T> wq, wk, wv, wo;  // D x D, x * W convention

  std::size_t model_dim() const { return heads * head_dim; }
  void validate() const;
};

template <typename T>
struct AttentionGrads {
  BasicTensor<T> wq, wk, wv, wo;
};

// Everything mha_backward needs from the forward pass.
template <typename T>
struct MhaTape {
  BasicTensor<T> x;
  BasicTensor<T> q, k, v;  // rotated q and k
  BasicTensor<T> ctx;
  std::vector<T> lse;  // heads x S
  const AttentionPlan* plan = nullptr;
  const Tensor64* angles = nullptr;
};

// External key/value buffer for cached attention. Rows listed in `slots`
// are overwritten with the current tokens' keys and values; all other rows
// are history.
template <typename T>
struct KvContext {
  BasicTensor<T> keys;
  BasicTensor<T> values;
  std::vector<std::size_t> slots;
};

// Rotated keys and values of the current tokens, for appending to a cache.
template <typename T>
struct KvCapture {
  BasicTensor<T> keys;
  BasicTensor<T> values;
};

// x: (S x D); angles: (S x pairs) with pairs <= head_dim / 2.
template <typename T>
BasicTensor<T> mha_forward(const BasicTensor<T>& x, const AttentionWeights<T>& w,
                           const AttentionPlan& plan, const Tensor64& angles, Exec exec,
                           MhaTape<T>* tape = nullptr, AttentionCounters* counters = nullptr,
                           KvContext<T>* context = nullptr, KvCapture<T>* capture = nullptr);

// Accumulates weight gradients and returns dL/dx.
template <typename T>
BasicTensor<T> mha_backward(const MhaTape<T>& tape, const AttentionWeights<T>& w,
                            const BasicTensor<T>& dy, AttentionGrads<T>& grads, Exec exec);

struct RopeInputs {
  const RopeLayout* layout = nullptr;
  const SimplexPool* pool = nullptr;
  const VertexAssignment* assignment = nullptr;
};

// Full-sequence multi-head attention under the given mode.
template <typename T>
BasicTensor<T> multi_head_attention(const BasicTensor<T>& x, const AttentionWeights<T>& w,
                                    const TopologySpec& spec, const RopeInputs& rope,
                                    AttentionMode mode = AttentionMode::causal_hub,
                                    Exec exec = Exec::parallel);

// Same computation through dense masks and masked_attention_reference.
template <typename T>
BasicTensor<T> multi_head_attention_reference(const BasicTensor<T>& x,
                                              const AttentionWeights<T>& w,
                                              const TopologySpec& spec, const RopeInputs& rope,
                                              AttentionMode mode = AttentionMode::causal_hub);

MaskMatrix mask_for_mode(const TopologySpec& spec, AttentionMode mode);

// ---------------------------------------------------------------------------
// Analytic cost model.

enum class CostMode { dense, sparse_hub };

const char* to_string(CostMode mode);
CostMode cost_mode_from_string(const std::string& s);

struct CostReport {
  CostMode mode = CostMode::sparse_hub;
  std::size_t P = 0, T = 0, L = 0, K = 0, n = 0;
  std::size_t heads = 1;
  std::size_t head_dim = 0;
  std::uint64_t pairs = 0;  // attended pairs within one block
  double flops = 0.0;       // pairs * 4 * head_dim * heads * blocks

  static std::string csv_header();
  std::string csv_row() const;
};

// Dense: P^2 (nL)^2. Sparse hub: P nL (nL + nK) + nK (P nL + nK).
std::uint64_t block_pair_count(const TopologySpec& spec, CostMode mode);
CostReport attention_cost(const TopologySpec& spec, CostMode mode, std::size_t heads = 1,
                          std::size_t head_dim = 64);
// Pairs for one forward of block b against its visible history; equals
// visible_blocks(b) * block_pair_count.
std::uint64_t visible_pair_count(const TopologySpec& spec, CostMode mode, std::size_t block);

}  // namespace hubsim
