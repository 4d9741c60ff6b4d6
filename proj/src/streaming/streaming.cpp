#include "hubsim/streaming.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "hubsim/errors.hpp"

namespace hubsim {

void DenoiseSchedule::validate() const {
  if (timesteps.empty()) throw std::invalid_argument("schedule: no timesteps");
  for (std::size_t i = 0; i < timesteps.size(); ++i) {
    if (timesteps[i] <= 0 || timesteps[i] > 1000) {
      throw std::invalid_argument("schedule: timestep " + std::to_string(timesteps[i]) +
                                  " outside (0, 1000]");
    }
    if (i > 0 && timesteps[i] >= timesteps[i - 1]) {
      throw std::invalid_argument("schedule: timesteps must be strictly decreasing");
    }
  }
  if (!(shift > 0.0)) throw std::invalid_argument("schedule: shift must be > 0");
}

DenoiseSchedule DenoiseSchedule::parse(const std::string& csv, double shift) {
  DenoiseSchedule s;
  s.timesteps.clear();
  s.shift = shift;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t pos = 0;
    int v = 0;
    try {
      v = std::stoi(item, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos == 0) throw std::invalid_argument("schedule: bad timestep '" + item + "'");
    s.timesteps.push_back(v);
  }
  s.validate();
  return s;
}

double warp_sigma(double u, double shift) { return shift * u / (1.0 + (shift - 1.0) * u); }

std::vector<double> schedule_sigmas(const DenoiseSchedule& schedule) {
  schedule.validate();
  std::vector<double> out;
  for (int t : schedule.timesteps) out.push_back(warp_sigma(t / 1000.0, schedule.shift));
  return out;
}

// ---------------------------------------------------------------------------
// FrameRing

template <typename T>
FrameRing<T>::FrameRing(std::size_t capacity_frames, std::size_t tokens_per_frame, std::size_t dim)
    : capacity_(capacity_frames),
      tokens_per_frame_(tokens_per_frame),
      dim_(dim),
      frame_ids_(capacity_frames),
      keys_(capacity_frames * tokens_per_frame * dim),
      values_(keys_.size()) {
  if (capacity_frames == 0) throw std::invalid_argument("frame ring needs capacity");
}

template <typename T>
std::size_t FrameRing<T>::frame_index(std::size_t i) const {
  if (i >= count_) throw std::out_of_range("frame ring index");
  return frame_ids_[slot(i)];
}

template <typename T>
std::span<const T> FrameRing<T>::keys(std::size_t i) const {
  if (i >= count_) throw std::out_of_range("frame ring index");
  const std::size_t n = tokens_per_frame_ * dim_;
  return {keys_.data() + slot(i) * n, n};
}

template <typename T>
std::span<const T> FrameRing<T>::values(std::size_t i) const {
  if (i >= count_) throw std::out_of_range("frame ring index");
  const std::size_t n = tokens_per_frame_ * dim_;
  return {values_.data() + slot(i) * n, n};
}

template <typename T>
void FrameRing<T>::push(std::size_t frame, std::span<const T> k, std::span<const T> v) {
  const std::size_t n = tokens_per_frame_ * dim_;
  if (k.size() != n || v.size() != n) throw ShapeError("frame ring: frame has the wrong size");
  if (count_ > 0 && frame <= frame_index(count_ - 1)) {
    throw std::invalid_argument("frame ring: frame " + std::to_string(frame) +
                                " is not newer than the cached frames");
  }
  if (count_ == capacity_) {
    head_ = (head_ + 1) % capacity_;
    --count_;
  }
  const std::size_t s = slot(count_);
  frame_ids_[s] = frame;
  std::copy(k.begin(), k.end(), keys_.begin() + static_cast<std::ptrdiff_t>(s * n));
  std::copy(v.begin(), v.end(), values_.begin() + static_cast<std::ptrdiff_t>(s * n));
  ++count_;
}

template <typename T>
void FrameRing<T>::evict_before(std::size_t frame) {
  while (count_ > 0 && frame_ids_[head_] < frame) {
    head_ = (head_ + 1) % capacity_;
    --count_;
  }
}

// ---------------------------------------------------------------------------
// KVCacheSet

template <typename T>
KVCacheSet<T>::KVCacheSet(const TopologySpec& spec, std::size_t layers, std::size_t dim)
    : spec_(spec), layers_(layers), dim_(dim) {
  spec_.validate();
  if (layers < 1 || dim < 1) throw std::invalid_argument("cache: layers and dim must be >= 1");
  const std::size_t cap = window_frames();
  agents_.reserve(layers * spec_.P);
  for (std::size_t l = 0; l < layers; ++l) {
    for (std::size_t p = 0; p < spec_.P; ++p) agents_.emplace_back(cap, spec_.L(), dim);
    hubs_.emplace_back(cap, std::max<std::size_t>(spec_.K, 1), dim);
  }
}

template <typename T>
std::size_t KVCacheSet<T>::window_frames() const {
  return spec_.window ? std::min(*spec_.window, spec_.T) : spec_.T;
}

template <typename T>
const FrameRing<T>& KVCacheSet<T>::agent(std::size_t layer, std::size_t p) const {
  if (layer >= layers_ || p >= spec_.P) throw std::out_of_range("cache: agent stream index");
  return agents_[layer * spec_.P + p];
}

template <typename T>
const FrameRing<T>& KVCacheSet<T>::hub(std::size_t layer) const {
  if (layer >= layers_) throw std::out_of_range("cache: layer index");
  return hubs_[layer];
}

template <typename T>
std::size_t KVCacheSet<T>::tokens_per_layer() const {
  std::size_t n = 0;
  for (std::size_t p = 0; p < spec_.P; ++p) n += agent(0, p).tokens();
  if (spec_.K > 0) n += hub(0).tokens();
  return n;
}

template <typename T>
void KVCacheSet<T>::append_block(std::size_t block, const std::vector<KvCapture<T>>& captures) {
  if (block != cursor_) {
    throw std::invalid_argument("cache: block " + std::to_string(block) +
                                " appended out of order (expected " + std::to_string(cursor_) + ")");
  }
  if (block >= spec_.blocks()) throw std::out_of_range("cache: block beyond the sequence");
  const std::size_t n = spec_.n;
  const std::size_t L = spec_.L();
  const std::size_t K = spec_.K;
  const std::size_t rows = spec_.P * n * L + n * K;
  if (captures.size() != layers_) throw ShapeError("cache: one capture per layer is required");
  for (const auto& c : captures) {
    if (c.keys.shape() != Shape{rows, dim_} || c.values.shape() != Shape{rows, dim_}) {
      throw ShapeError("cache: capture " + shape_to_string(c.keys.shape()) + " for a block of " +
                       std::to_string(rows) + " tokens");
    }
  }
  const std::size_t wb = spec_.window_blocks();
  const std::size_t keep_from = block + 1 >= wb ? (block + 1 - wb) * n : 0;
  for (std::size_t l = 0; l < layers_; ++l) {
    const auto& c = captures[l];
    for (std::size_t p = 0; p < spec_.P; ++p) {
      FrameRing<T>& ring = agents_[l * spec_.P + p];
      ring.evict_before(keep_from);
      for (std::size_t t = 0; t < n; ++t) {
        const std::size_t row = (p * n + t) * L;
        ring.push(block * n + t, c.keys.data().subspan(row * dim_, L * dim_),
                  c.values.data().subspan(row * dim_, L * dim_));
      }
    }
    if (K > 0) {
      FrameRing<T>& ring = hubs_[l];
      ring.evict_before(keep_from);
      for (std::size_t t = 0; t < n; ++t) {
        const std::size_t row = spec_.P * n * L + t * K;
        ring.push(block * n + t, c.keys.data().subspan(row * dim_, K * dim_),
                  c.values.data().subspan(row * dim_, K * dim_));
      }
    }
  }
  ++cursor_;
}

template <typename T>
void KVCacheSet<T>::clear_agent(std::size_t p) {
  if (p >= spec_.P) throw std::out_of_range("cache: agent index");
  for (std::size_t l = 0; l < layers_; ++l) agents_[l * spec_.P + p].clear();
}

template <typename T>
void KVCacheSet<T>::clear_hub() {
  for (auto& h : hubs_) h.clear();
}

template <typename T>
KVCacheSet<T> init_caches(const TopologySpec& spec, std::size_t layers, std::size_t dim) {
  return KVCacheSet<T>(spec, layers, dim);
}

// ---------------------------------------------------------------------------
// cached forward

template <typename T>
BlockContext<T> assemble_context(const KVCacheSet<T>& cache, std::size_t block,
                                 AttentionMode mode, const std::vector<std::size_t>& agent_order) {
  const TopologySpec& spec = cache.spec();
  if (mode == AttentionMode::bidirectional) {
    throw std::invalid_argument("cached forward: bidirectional mode cannot stream");
  }
  if (block != cache.cursor()) {
    throw std::invalid_argument("cached forward: block " + std::to_string(block) +
                                " but the cache expects " + std::to_string(cache.cursor()));
  }
  if (agent_order.size() != spec.P) throw std::invalid_argument("cached forward: agent order");
  const std::size_t n = spec.n;
  const std::size_t L = spec.L();
  const std::size_t K = spec.K;
  const std::size_t wb = spec.window_blocks();
  const std::size_t lo_frame = block + 1 >= wb ? (block + 1 - wb) * n : 0;

  auto history = [&](const FrameRing<T>& ring) {
    std::size_t first = 0;
    while (first < ring.frames() && ring.frame_index(first) < lo_frame) ++first;
    return first;
  };

  BlockContext<T> ctx;
  const std::size_t streams = spec.P + (K > 0 ? 1 : 0);
  std::vector<std::size_t> first(streams);
  std::size_t total = 0;
  for (std::size_t s = 0; s < streams; ++s) {
    const bool is_hub = s == spec.P;
    const FrameRing<T>& ring = is_hub ? cache.hub(0) : cache.agent(0, s);
    first[s] = history(ring);
    const std::size_t per_frame = is_hub ? K : L;
    ctx.segment_begin.push_back(total);
    total += (ring.frames() - first[s]) * per_frame + n * per_frame;
    ctx.segment_end.push_back(total);
  }
  const std::size_t width = cache.dim();

  // current-token slots: batch order is (agent, frame, h, w) then (frame, slot)
  std::vector<std::size_t> slots;
  slots.reserve(spec.P * n * L + n * K);
  for (std::size_t p = 0; p < spec.P; ++p) {
    const std::size_t cur = ctx.segment_end[p] - n * L;
    for (std::size_t i = 0; i < n * L; ++i) slots.push_back(cur + i);
  }
  if (K > 0) {
    const std::size_t cur = ctx.segment_end[spec.P] - n * K;
    for (std::size_t i = 0; i < n * K; ++i) slots.push_back(cur + i);
  }

  for (std::size_t l = 0; l < cache.layers(); ++l) {
    KvContext<T> kv;
    kv.keys = BasicTensor<T>({total, width}, T{0});
    kv.values = BasicTensor<T>({total, width}, T{0});
    for (std::size_t s = 0; s < streams; ++s) {
      const bool is_hub = s == spec.P;
      const FrameRing<T>& ring = is_hub ? cache.hub(l) : cache.agent(l, s);
      std::size_t row = ctx.segment_begin[s];
      for (std::size_t f = first[s]; f < ring.frames(); ++f) {
        const auto k = ring.keys(f);
        const auto v = ring.values(f);
        std::copy(k.begin(), k.end(), kv.keys.data().begin() + static_cast<std::ptrdiff_t>(row * width));
        std::copy(v.begin(), v.end(), kv.values.data().begin() + static_cast<std::ptrdiff_t>(row * width));
        row += ring.tokens_per_frame();
      }
    }
    kv.slots = slots;
    ctx.contexts.push_back(std::move(kv));
  }

  // plan, mirroring plan_for_sequence's range order
  ctx.plan = AttentionPlan(total);
  auto add_agents = [&]() {
    for (std::size_t q : agent_order) ctx.plan.add_range(ctx.segment_begin[q], ctx.segment_end[q]);
  };
  auto add_hub = [&]() {
    if (K > 0) ctx.plan.add_range(ctx.segment_begin[spec.P], ctx.segment_end[spec.P]);
  };
  for (std::size_t p = 0; p < spec.P; ++p) {
    for (std::size_t i = 0; i < n * L; ++i) {
      ctx.plan.add_query();
      if (mode == AttentionMode::causal_dense) {
        add_agents();
      } else {
        ctx.plan.add_range(ctx.segment_begin[p], ctx.segment_end[p]);
      }
      add_hub();
      if (mode == AttentionMode::causal_hub) {
        // audit: every key must sit in the agent's own segment or the hubs
        const std::size_t q = ctx.plan.queries() - 1;
        for (const auto& r : ctx.plan.ranges(q)) {
          for (std::size_t j = r.begin; j < r.end; ++j) {
            const bool own = j >= ctx.segment_begin[p] && j < ctx.segment_end[p];
            const bool hub = K > 0 && j >= ctx.segment_begin[spec.P];
            if (!own && !hub) ++ctx.foreign_reads;
          }
        }
      }
    }
  }
  for (std::size_t i = 0; i < n * K; ++i) {
    ctx.plan.add_query();
    add_agents();
    add_hub();
  }
  return ctx;
}

template <typename T>
TokenBatch<T> block_batch(const Model<T>& model, const TopologySpec& spec, std::size_t block,
                          const BasicTensor<T>& latents, const BasicTensor<T>& actions,
                          double sigma, const VertexAssignment& assignment) {
  const ToyModelConfig& mc = model.config();
  const std::size_t n = spec.n;
  const std::size_t Cz = mc.latent_channels;
  const std::size_t F = mc.action_fields();
  if (latents.shape() != Shape{spec.P, n, spec.H, spec.W, Cz}) {
    throw ShapeError("block latents " + shape_to_string(latents.shape()) + " for " +
                     spec.describe());
  }
  if (actions.rank() != 3 || actions.extent(0) != spec.P || actions.extent(1) < (block + 1) * n ||
      actions.extent(2) != F) {
    throw ShapeError("block actions " + shape_to_string(actions.shape()) + " do not cover block " +
                     std::to_string(block));
  }
  TokenBatch<T> b;
  for (std::size_t p = 0; p < spec.P; ++p) {
    for (std::size_t t = block * n; t < (block + 1) * n; ++t) {
      for (std::size_t h = 0; h < spec.H; ++h) {
        for (std::size_t w = 0; w < spec.W; ++w) {
          b.coords.push_back({static_cast<std::int32_t>(p), t, h, w, 0, block});
          b.action_row.push_back(p * n + (t - block * n));
        }
      }
    }
  }
  b.agent_count = b.coords.size();
  for (std::size_t t = block * n; t < (block + 1) * n; ++t) {
    for (std::size_t k = 0; k < spec.K; ++k) b.coords.push_back({kHub, t, 0, 0, k, block});
  }
  b.latents = latents;
  b.latents.reshape({b.agent_count, Cz});
  b.actions = BasicTensor<T>({spec.P * n, F});
  for (std::size_t p = 0; p < spec.P; ++p) {
    for (std::size_t t = 0; t < n; ++t) {
      for (std::size_t f = 0; f < F; ++f) b.actions.at({p * n + t, f}) = actions.at({p, block * n + t, f});
    }
  }
  b.sigmas = {sigma};
  b.sigma_group.assign(b.coords.size(), 0);
  b.angles = rope_table(model.rope(), model.pool(), assignment, b.coords, spec.extent());
  return b;
}

namespace {

template <typename T>
void write_block(BasicTensor<T>& dst, const BasicTensor<T>& block, std::size_t b, std::size_t n) {
  const std::size_t P = dst.extent(0);
  const std::size_t frames = dst.extent(1);
  const std::size_t inner = dst.size() / (P * frames);
  for (std::size_t p = 0; p < P; ++p) {
    const T* src = block.data().data() + p * n * inner;
    std::copy(src, src + n * inner, dst.data().begin() + static_cast<std::ptrdiff_t>((p * frames + b * n) * inner));
  }
}

}  // namespace

template <typename T>
RolloutResult<T> rollout(const Model<T>& model, const BasicTensor<T>& first_block,
                         const BasicTensor<T>& actions, const VertexAssignment& assignment,
                         const DenoiseSchedule& schedule, const RngStream& rng,
                         const RolloutOptions& options) {
  const ToyModelConfig& mc = model.config();
  const std::vector<double> sigmas = schedule_sigmas(schedule);
  if (first_block.rank() != 5) {
    throw ShapeError("rollout: first observation must be (P, n, H, W, C), got " +
                     shape_to_string(first_block.shape()));
  }
  const std::size_t P = first_block.extent(0);
  const std::size_t Tn = options.frames;
  TopologySpec spec = mc.topology(P, Tn, options.mode);
  if (options.window) spec.window = options.window;
  if (options.unwindowed) spec.window = std::nullopt;
  spec.validate();
  if (actions.rank() != 3 || actions.extent(0) != P || actions.extent(2) != mc.action_fields()) {
    throw ShapeError("rollout: actions " + shape_to_string(actions.shape()) + " for " +
                     std::to_string(P) + " agents");
  }
  if (actions.extent(1) < Tn) {
    throw std::invalid_argument("rollout: action stream covers " +
                                std::to_string(actions.extent(1)) + " frames, T=" +
                                std::to_string(Tn));
  }
  if (!(options.sigma_ctx >= 0.0 && options.sigma_ctx < 1.0)) {
    throw std::invalid_argument("rollout: sigma_ctx must lie in [0, 1)");
  }
  const std::size_t n = spec.n;
  const Shape block_shape{P, n, spec.H, spec.W, mc.latent_channels};
  if (first_block.shape() != block_shape) {
    throw ShapeError("rollout: first observation " + shape_to_string(first_block.shape()) +
                     " but a block is " + shape_to_string(block_shape));
  }
  for (T v : first_block.data()) {
    if (!std::isfinite(static_cast<double>(v))) throw std::invalid_argument("rollout: first observation is not finite");
  }
  if (assignment.agents() != P) throw std::invalid_argument("rollout: assignment size differs from P");

  RolloutResult<T> res;
  res.spec = spec;
  res.latents = BasicTensor<T>({P, Tn, spec.H, spec.W, mc.latent_channels}, T{0});
  res.context = res.latents;
  KVCacheSet<T> cache = init_caches<T>(spec, mc.layers, mc.model_dim);
  const std::vector<std::size_t> order = canonical_agent_order(assignment);

  auto cached_forward = [&](std::size_t b, const BasicTensor<T>& z, double sigma,
                            std::vector<KvCapture<T>>* captures) {
    BlockContext<T> ctx = assemble_context(cache, b, options.mode, order);
    res.foreign_reads += ctx.foreign_reads;
    const TokenBatch<T> batch = block_batch(model, spec, b, z, actions, sigma, assignment);
    BasicTensor<T> v =
        model.forward_batch(batch, {&ctx.plan, &ctx.contexts, captures}, nullptr, &res.counters);
    ++res.forwards;
    v.reshape(block_shape);
    return v;
  };
  auto commit = [&](std::size_t b, const BasicTensor<T>& z) {
    BasicTensor<T> zc = z;
    if (options.sigma_ctx > 0.0) {
      RngStream cr = rng.split("context").split(b);
      BasicTensor<T> eps(block_shape);
      for (auto& e : eps.data()) e = static_cast<T>(cr.normal());
      for (std::size_t i = 0; i < zc.size(); ++i) {
        zc[i] = static_cast<T>((1.0 - options.sigma_ctx) * z[i] + options.sigma_ctx * eps[i]);
      }
    }
    std::vector<KvCapture<T>> captures;
    cached_forward(b, zc, options.sigma_ctx, &captures);
    cache.append_block(b, captures);
    write_block(res.context, zc, b, n);
    res.peak_cached_tokens = std::max(res.peak_cached_tokens, cache.tokens_per_layer());
  };

  write_block(res.latents, first_block, 0, n);
  commit(0, first_block);

  for (std::size_t b = 1; b < spec.blocks(); ++b) {
    const auto start = std::chrono::steady_clock::now();
    RngStream nr = rng.split("block").split(b);
    BasicTensor<T> z(block_shape);
    for (auto& e : z.data()) e = static_cast<T>(nr.normal());
    for (std::size_t i = 0; i < sigmas.size(); ++i) {
      const double s0 = sigmas[i];
      const double s1 = i + 1 < sigmas.size() ? sigmas[i + 1] : 0.0;
      const BasicTensor<T> v = cached_forward(b, z, s0, nullptr);
      if (options.record_steps) res.steps.push_back({b, i, s0, z, v});
      const T dt = static_cast<T>(s1 - s0);
      for (std::size_t k = 0; k < z.size(); ++k) z[k] += dt * v[k];
    }
    write_block(res.latents, z, b, n);
    commit(b, z);
    res.block_seconds.push_back(
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
  }
  return res;
}

#define HUBSIM_STREAMING(T)                                                                        \
  template class FrameRing<T>;                                                                     \
  template class KVCacheSet<T>;                                                                    \
  template KVCacheSet<T> init_caches<T>(const TopologySpec&, std::size_t, std::size_t);            \
  template BlockContext<T> assemble_context(const KVCacheSet<T>&, std::size_t, AttentionMode,      \
                                            const std::vector<std::size_t>&);                      \
  template TokenBatch<T> block_batch(const Model<T>&, const TopologySpec&, std::size_t,            \
                                     const BasicTensor<T>&, const BasicTensor<T>&, double,         \
                                     const VertexAssignment&);                                     \
  template RolloutResult<T> rollout(const Model<T>&, const BasicTensor<T>&, const BasicTensor<T>&, \
                                    const VertexAssignment&, const DenoiseSchedule&,               \
                                    const RngStream&, const RolloutOptions&);

HUBSIM_STREAMING(float)
HUBSIM_STREAMING(double)

}  // namespace hubsim
