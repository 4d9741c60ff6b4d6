#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hubsim/action.hpp"
#include "hubsim/attention.hpp"
#include "hubsim/rope.hpp"
#include "hubsim/simplex.hpp"
#include "hubsim/tensor.hpp"
#include "hubsim/topology.hpp"

namespace hubsim {

struct ToyModelConfig {
  std::size_t model_dim = 64;
  std::size_t layers = 2;
  std::size_t heads = 2;
  std::size_t head_dim = 32;
  std::size_t mlp_ratio = 4;
  RopeBands rope{16, 8, 4, 4};
  double rope_base = 10000.0;
  std::size_t pool_size = 4;  // V
  double alpha = 1.0;
  std::size_t hub_tokens = 4;  // K
  std::size_t height = 2;
  std::size_t width = 2;
  std::size_t latent_channels = 4;
  std::size_t block_frames = 3;  // n
  std::optional<std::size_t> window = 24;
  std::size_t sigma_embed_dim = 16;
  std::size_t action_branch = 128;
  ActionKind action_kind = ActionKind::game;

  std::size_t tokens_per_frame() const { return height * width; }
  std::size_t action_fields() const { return action_layout(action_kind).fields(); }
  void validate() const;

  // Large preset with the production layer shapes; never trained here.
  static ToyModelConfig production();
  // Few-parameter preset for finite-difference checks.
  static ToyModelConfig tiny();

  // Topology of a P-agent, T-frame sequence. Only causal_hub carries hubs.
  TopologySpec topology(std::size_t P, std::size_t T, AttentionMode mode) const;
};

template <typename T>
struct LayerParams {
  BasicTensor<T> act_w, act_b;  // action bias g_l: D x D, D
  BasicTensor<T> mod_w, mod_b;  // sigma modulation: E x 4D, 4D
  AttentionWeights<T> attn;
  BasicTensor<T> ff1_w, ff1_b, ff2_w, ff2_b;
};

template <typename T>
struct ModelParams {
  // action encoder
  BasicTensor<T> disc_w, disc_b, cont_w, cont_b;
  BasicTensor<T> fuse1_w, fuse1_b, fuse2_w, fuse2_b;
  // trunk
  BasicTensor<T> in_w, in_b;
  BasicTensor<T> hub;  // K x D learned hub embeddings
  std::vector<LayerParams<T>> layers;
  BasicTensor<T> final_mod_w, final_mod_b;  // E x 2D, 2D
  BasicTensor<T> out_w, out_b;

  static ModelParams zeros(const ToyModelConfig& config);

  // f(name, tensor) over every parameter tensor in a fixed order.
  template <typename F>
  void visit(F&& f) {
    visit_impl(*this, f);
  }
  template <typename F>
  void visit(F&& f) const {
    visit_impl(*this, f);
  }

  std::size_t count() const;
  void fill(T value);
  // this += a * other
  void axpy(T a, const ModelParams& other);

 private:
  template <typename Self, typename F>
  static void visit_impl(Self& self, F& f);
};

// Tokens of one forward call. Agent tokens come first, in any order the
// attention plan agrees with; hub tokens follow.
template <typename T>
struct TokenBatch {
  std::vector<TokenCoordinate> coords;
  std::size_t agent_count = 0;
  BasicTensor<T> latents;                // agent_count x Cz
  BasicTensor<T> actions;                // R x F action rows
  std::vector<std::size_t> action_row;   // agent token -> action row
  std::vector<double> sigmas;            // one per noise group
  std::vector<std::size_t> sigma_group;  // token -> noise group
  Tensor64 angles;                       // tokens x head_dim/2

  std::size_t size() const { return coords.size(); }
};

// Attention wiring for one forward call. With contexts, keys and values come
// from an external buffer per layer; with captures, each layer's rotated keys
// and values of the batch are returned.
template <typename T>
struct AttentionSetup {
  const AttentionPlan* plan = nullptr;
  std::vector<KvContext<T>>* contexts = nullptr;
  std::vector<KvCapture<T>>* captures = nullptr;
};

template <typename T>
struct EncoderTape {
  BasicTensor<T> disc_pre, cont_pre, cat, fuse_pre, fuse;
};

template <typename T>
struct LayerTape {
  BasicTensor<T> n1, h1, n2, h2, f_pre, f;
  std::vector<T> rstd1, rstd2;
  BasicTensor<T> mod;  // groups x 4D
  MhaTape<T> mha;
};

// Forward activations for backward. Holds internal pointers, so it stays put.
template <typename T>
struct ForwardTape {
  ForwardTape() = default;
  ForwardTape(const ForwardTape&) = delete;
  ForwardTape& operator=(const ForwardTape&) = delete;

  TokenBatch<T> batch;
  AttentionPlan plan;
  EncoderTape<T> encoder;
  BasicTensor<T> actions_u;  // R x D encoded actions
  BasicTensor<T> emb;        // groups x E
  std::vector<LayerTape<T>> layers;
  BasicTensor<T> nf, hf, modf;
  std::vector<T> rstdf;
};

// Latents and per-block noise levels of a full P-agent sequence.
template <typename T>
struct SequenceInputs {
  BasicTensor<T> latents;      // P x T x H x W x Cz
  BasicTensor<T> actions;      // P x T' x F with T' >= T
  std::vector<double> sigmas;  // one per block
  VertexAssignment assignment;
};

enum class InitStyle {
  standard,  // scaled normal weights, zero biases
  dense,     // every tensor random, for gradient checks
};

// Action-conditioned block-causal transformer. Predicts the flow velocity
// of every agent latent token.
template <typename T>
class Model {
 public:
  explicit Model(ToyModelConfig config);

  const ToyModelConfig& config() const { return config_; }
  ModelParams<T>& params() { return params_; }
  const ModelParams<T>& params() const { return params_; }
  const RopeLayout& rope() const { return rope_; }
  const SimplexPool& pool() const { return pool_; }
  Exec exec() const { return exec_; }
  void set_exec(Exec exec) { exec_ = exec; }

  void initialize(std::uint64_t seed, InitStyle style = InitStyle::standard);

  // Velocity for every agent token of the batch: agent_count x Cz.
  BasicTensor<T> forward_batch(const TokenBatch<T>& batch, const AttentionSetup<T>& attention,
                               ForwardTape<T>* tape = nullptr,
                               AttentionCounters* counters = nullptr) const;
  // Accumulates parameter gradients of <d_out, output>.
  void backward(const ForwardTape<T>& tape, const BasicTensor<T>& d_out,
                ModelParams<T>& grads) const;

  TokenBatch<T> sequence_batch(const TopologySpec& spec, const SequenceInputs<T>& in) const;
  // Full-sequence forward; output P x T x H x W x Cz.
  BasicTensor<T> forward(const SequenceInputs<T>& in, AttentionMode mode,
                         ForwardTape<T>* tape = nullptr, AttentionCounters* counters = nullptr,
                         std::optional<std::size_t> window_override = std::nullopt) const;

  // Encoded actions, R x D.
  BasicTensor<T> encode_actions(const BasicTensor<T>& actions, EncoderTape<T>* tape) const;

 private:
  ToyModelConfig config_;
  RopeLayout rope_;
  SimplexPool pool_;
  ModelParams<T> params_;
  Exec exec_ = Exec::parallel;
};

// Agents sorted by vertex: the canonical order for cross-agent reductions.
std::vector<std::size_t> canonical_agent_order(const VertexAssignment& assignment);

// Sinusoidal embedding of a noise level.
std::vector<double> sigma_embedding(double sigma, std::size_t dim);

template <typename T>
T gelu(T x);
template <typename T>
T gelu_grad(T x);

template <typename T>
template <typename Self, typename F>
void ModelParams<T>::visit_impl(Self& self, F& f) {
  auto v = [&f](const std::string& name, auto& t) {
    if (t.size() > 0) f(name, t);
  };
  v("action.disc_w", self.disc_w);
  v("action.disc_b", self.disc_b);
  v("action.cont_w", self.cont_w);
  v("action.cont_b", self.cont_b);
  v("action.fuse1_w", self.fuse1_w);
  v("action.fuse1_b", self.fuse1_b);
  v("action.fuse2_w", self.fuse2_w);
  v("action.fuse2_b", self.fuse2_b);
  v("embed.in_w", self.in_w);
  v("embed.in_b", self.in_b);
  v("embed.hub", self.hub);
  for (std::size_t l = 0; l < self.layers.size(); ++l) {
    auto& lp = self.layers[l];
    const std::string p = "layer" + std::to_string(l) + ".";
    v(p + "act_w", lp.act_w);
    v(p + "act_b", lp.act_b);
    v(p + "mod_w", lp.mod_w);
    v(p + "mod_b", lp.mod_b);
    v(p + "wq", lp.attn.wq);
    v(p + "wk", lp.attn.wk);
    v(p + "wv", lp.attn.wv);
    v(p + "wo", lp.attn.wo);
    v(p + "ff1_w", lp.ff1_w);
    v(p + "ff1_b", lp.ff1_b);
    v(p + "ff2_w", lp.ff2_w);
    v(p + "ff2_b", lp.ff2_b);
  }
  v("final.mod_w", self.final_mod_w);
  v("final.mod_b", self.final_mod_b);
  v("final.out_w", self.out_w);
  v("final.out_b", self.out_b);
}

extern template class Model<float>;
extern template class Model<double>;
extern template struct ModelParams<float>;
extern template struct ModelParams<double>;

}  // namespace hubsim
