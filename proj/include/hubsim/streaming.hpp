#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hubsim/model.hpp"
#include "hubsim/rng.hpp"

namespace hubsim {

struct DenoiseSchedule {
  std::vector<int> timesteps{1000, 750, 500, 250};
  double shift = 5.0;

  // Strictly decreasing timesteps in (0, 1000]; shift > 0.
  void validate() const;
  // "1000,750,500,250"
  static DenoiseSchedule parse(const std::string& csv, double shift = 5.0);
};

// sigma = s u / (1 + (s - 1) u)
double warp_sigma(double u, double shift);
std::vector<double> schedule_sigmas(const DenoiseSchedule& schedule);

// Fixed-capacity ring of whole frames, oldest first.
template <typename T>
class FrameRing {
 public:
  FrameRing() = default;
  FrameRing(std::size_t capacity_frames, std::size_t tokens_per_frame, std::size_t dim);

  std::size_t capacity_frames() const { return capacity_; }
  std::size_t capacity_tokens() const { return capacity_ * tokens_per_frame_; }
  std::size_t tokens_per_frame() const { return tokens_per_frame_; }
  std::size_t frames() const { return count_; }
  std::size_t tokens() const { return count_ * tokens_per_frame_; }

  // i-th oldest cached frame.
  std::size_t frame_index(std::size_t i) const;
  std::span<const T> keys(std::size_t i) const;
  std::span<const T> values(std::size_t i) const;

  // Appends one frame (tokens_per_frame rows each); a full ring drops its
  // oldest frame first.
  void push(std::size_t frame, std::span<const T> keys, std::span<const T> values);
  // Drops frames older than `frame`, oldest first.
  void evict_before(std::size_t frame);
  void clear() { head_ = count_ = 0; }

 private:
  std::size_t slot(std::size_t i) const { return (head_ + i) % capacity_; }

  std::size_t capacity_ = 0;
  std::size_t tokens_per_frame_ = 0;
  std::size_t dim_ = 0;
  std::size_t head_ = 0;
  std::size_t count_ = 0;
  std::vector<std::size_t> frame_ids_;
  std::vector<T> keys_;
  std::vector<T> values_;
};

// Per layer: one ring per agent stream and one shared hub ring.
template <typename T>
class KVCacheSet {
 public:
  KVCacheSet(const TopologySpec& spec, std::size_t layers, std::size_t dim);

  const TopologySpec& spec() const { return spec_; }
  std::size_t layers() const { return layers_; }
  std::size_t dim() const { return dim_; }
  std::size_t cursor() const { return cursor_; }
  // Frames a view keeps: the window, or T when unwindowed.
  std::size_t window_frames() const;
  std::size_t agent_capacity_tokens() const { return window_frames() * spec_.L(); }
  std::size_t hub_capacity_tokens() const { return window_frames() * spec_.K; }

  const FrameRing<T>& agent(std::size_t layer, std::size_t p) const;
  const FrameRing<T>& hub(std::size_t layer) const;
  std::size_t cached_frames(std::size_t p) const { return agent(0, p).frames(); }
  std::size_t cached_hub_frames() const { return hub(0).frames(); }
  std::size_t tokens_per_layer() const;

  // captures[l] rows: agent tokens ordered (agent, frame, h, w) for the
  // block's frames, then hub tokens ordered (frame, slot). Throws unless
  // block == cursor().
  void append_block(std::size_t block, const std::vector<KvCapture<T>>& captures);

  // For isolation probes.
  void clear_agent(std::size_t p);
  void clear_hub();

 private:
  TopologySpec spec_;
  std::size_t layers_;
  std::size_t dim_;
  std::size_t cursor_ = 0;
  std::vector<FrameRing<T>> agents_;  // layer * P + p
  std::vector<FrameRing<T>> hubs_;
};

template <typename T>
KVCacheSet<T> init_caches(const TopologySpec& spec, std::size_t layers, std::size_t dim);

// Keys a cached forward of `block` reads, laid out per agent stream then the
// hub stream, plus the attention plan over them.
template <typename T>
struct BlockContext {
  AttentionPlan plan;
  std::vector<KvContext<T>> contexts;  // one per layer
  std::vector<std::size_t> segment_begin;  // P agent segments, then the hub segment
  std::vector<std::size_t> segment_end;
  // Keys an agent query read from another agent's segment.
  std::uint64_t foreign_reads = 0;
};

template <typename T>
BlockContext<T> assemble_context(const KVCacheSet<T>& cache, std::size_t block,
                                 AttentionMode mode, const std::vector<std::size_t>& agent_order);

// Token batch for one block of P agents: latents (P, n, H, W, C), actions
// (P, T', F) covering the block's frames.
template <typename T>
TokenBatch<T> block_batch(const Model<T>& model, const TopologySpec& spec, std::size_t block,
                          const BasicTensor<T>& latents, const BasicTensor<T>& actions,
                          double sigma, const VertexAssignment& assignment);

struct RolloutOptions {
  std::size_t frames = 24;
  std::optional<std::size_t> window;  // overrides the model's window
  bool unwindowed = false;            // ignore every window
  AttentionMode mode = AttentionMode::causal_hub;
  double sigma_ctx = 0.0;
  bool record_steps = false;
};

template <typename T>
struct DenoiseRecord {
  std::size_t block = 0;
  std::size_t step = 0;
  double sigma = 0.0;
  BasicTensor<T> input;     // P x n x H x W x C
  BasicTensor<T> velocity;  // same
};

template <typename T>
struct RolloutResult {
  BasicTensor<T> latents;  // P x T x H x W x C, excluding hubs
  BasicTensor<T> context;  // what each block's cache entries were computed from
  std::vector<DenoiseRecord<T>> steps;
  AttentionCounters counters;
  std::uint64_t foreign_reads = 0;
  std::size_t peak_cached_tokens = 0;  // per layer
  std::size_t forwards = 0;            // cached block forwards
  std::vector<double> block_seconds;   // per generated block
  TopologySpec spec;
};

// Block 0 is the clean first observation (P, n, H, W, C). Every later block
// starts from seeded noise and is denoised with the schedule's Euler steps,
// each a cached forward reading the agent's own cache, the hub cache and the
// current block. Finished blocks are re-forwarded at sigma_ctx and appended.
template <typename T>
RolloutResult<T> rollout(const Model<T>& model, const BasicTensor<T>& first_block,
                         const BasicTensor<T>& actions, const VertexAssignment& assignment,
                         const DenoiseSchedule& schedule, const RngStream& rng,
                         const RolloutOptions& options = {});

}  // namespace hubsim
