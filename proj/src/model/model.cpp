#include "hubsim/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "hubsim/errors.hpp"
#include "hubsim/kernels.hpp"

namespace hubsim {

// ---------------------------------------------------------------------------
// config

void ToyModelConfig::validate() const {
  if (layers < 1 || heads < 1 || head_dim < 2) {
    throw std::invalid_argument("model: layers, heads and head_dim must be positive");
  }
  if (model_dim != heads * head_dim) {
    throw std::invalid_argument("model: model_dim " + std::to_string(model_dim) + " != heads " +
                                std::to_string(heads) + " x head_dim " + std::to_string(head_dim));
  }
  if (rope.total() != head_dim) {
    throw std::invalid_argument("model: rotary bands sum to " + std::to_string(rope.total()) +
                                ", head_dim is " + std::to_string(head_dim));
  }
  if (rope.p > 0 && (pool_size < 2 || pool_size > rope.p / 2 + 1)) {
    throw std::invalid_argument("model: pool size " + std::to_string(pool_size) +
                                " does not fit an agent band of " + std::to_string(rope.p));
  }
  if (!(alpha >= 0.0)) throw std::invalid_argument("model: alpha must be >= 0");
  if (mlp_ratio < 1 || latent_channels < 1 || action_branch < 1) {
    throw std::invalid_argument("model: mlp_ratio, latent_channels and action_branch must be >= 1");
  }
  if (sigma_embed_dim < 2 || sigma_embed_dim % 2 != 0) {
    throw std::invalid_argument("model: sigma_embed_dim must be even and >= 2");
  }
  if (height * width < 1 || block_frames < 1) {
    throw std::invalid_argument("model: empty frame or block");
  }
  if (window && *window < block_frames) {
    throw std::invalid_argument("model: window smaller than the block size");
  }
}

ToyModelConfig ToyModelConfig::production() {
  ToyModelConfig c;
  c.model_dim = 2048;
  c.layers = 28;
  c.heads = 16;
  c.head_dim = 128;
  c.rope = {64, 32, 16, 16};
  c.pool_size = 4;
  c.hub_tokens = 8;
  c.window = 24;
  c.sigma_embed_dim = 256;
  c.action_branch = 128;
  return c;
}

ToyModelConfig ToyModelConfig::tiny() {
  ToyModelConfig c;
  c.model_dim = 24;
  c.layers = 2;
  c.heads = 2;
  c.head_dim = 12;
  c.mlp_ratio = 2;
  c.rope = {4, 4, 2, 2};
  c.pool_size = 3;
  c.hub_tokens = 2;
  c.height = 2;
  c.width = 2;
  c.latent_channels = 2;
  c.block_frames = 1;
  c.window = std::nullopt;
  c.sigma_embed_dim = 4;
  c.action_branch = 4;
  return c;
}

TopologySpec ToyModelConfig::topology(std::size_t P, std::size_t T, AttentionMode mode) const {
  TopologySpec s;
  s.P = P;
  s.T = T;
  s.H = height;
  s.W = width;
  s.K = mode == AttentionMode::causal_hub ? hub_tokens : 0;
  s.n = block_frames;
  s.window = window;
  return s;
}

// ---------------------------------------------------------------------------
// parameters

template <typename T>
ModelParams<T> ModelParams<T>::zeros(const ToyModelConfig& c) {
  c.validate();
  const std::size_t D = c.model_dim;
  const std::size_t B = c.action_branch;
  const std::size_t E = c.sigma_embed_dim;
  const std::size_t M = c.model_dim * c.mlp_ratio;
  const ActionLayout al = action_layout(c.action_kind);
  const std::size_t cat = (al.discrete > 0 ? B : 0) + (al.continuous > 0 ? B : 0);
  auto z = [](Shape s) { return BasicTensor<T>(std::move(s), T{0}); };

  ModelParams p;
  if (al.discrete > 0) {
    p.disc_w = z({al.discrete, B});
    p.disc_b = z({B});
  }
  if (al.continuous > 0) {
    p.cont_w = z({al.continuous, B});
    p.cont_b = z({B});
  }
  p.fuse1_w = z({cat, D});
  p.fuse1_b = z({D});
  p.fuse2_w = z({D, D});
  p.fuse2_b = z({D});
  p.in_w = z({c.latent_channels, D});
  p.in_b = z({D});
  if (c.hub_tokens > 0) p.hub = z({c.hub_tokens, D});
  p.layers.resize(c.layers);
  for (auto& l : p.layers) {
    l.act_w = z({D, D});
    l.act_b = z({D});
    l.mod_w = z({E, 4 * D});
    l.mod_b = z({4 * D});
    l.attn.heads = c.heads;
    l.attn.head_dim = c.head_dim;
    l.attn.wq = z({D, D});
    l.attn.wk = z({D, D});
    l.attn.wv = z({D, D});
    l.attn.wo = z({D, D});
    l.ff1_w = z({D, M});
    l.ff1_b = z({M});
    l.ff2_w = z({M, D});
    l.ff2_b = z({D});
  }
  p.final_mod_w = z({E, 2 * D});
  p.final_mod_b = z({2 * D});
  p.out_w = z({D, c.latent_channels});
  p.out_b = z({c.latent_channels});
  return p;
}

template <typename T>
std::size_t ModelParams<T>::count() const {
  std::size_t n = 0;
  visit([&n](const std::string&, const BasicTensor<T>& t) { n += t.size(); });
  return n;
}

template <typename T>
void ModelParams<T>::fill(T value) {
  visit([value](const std::string&, BasicTensor<T>& t) { t.fill(value); });
}

template <typename T>
void ModelParams<T>::axpy(T a, const ModelParams& other) {
  std::vector<const BasicTensor<T>*> src;
  other.visit([&src](const std::string&, const BasicTensor<T>& t) { src.push_back(&t); });
  std::size_t k = 0;
  visit([&](const std::string& name, BasicTensor<T>& t) {
    if (k >= src.size() || src[k]->shape() != t.shape()) {
      throw ShapeError("axpy: parameter '" + name + "' does not match");
    }
    const auto& s = *src[k++];
    for (std::size_t i = 0; i < t.size(); ++i) t[i] += a * s[i];
  });
}

// ---------------------------------------------------------------------------
// helpers

std::vector<std::size_t> canonical_agent_order(const VertexAssignment& assignment) {
  std::vector<std::size_t> order(assignment.agents());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return assignment.vertex[a] < assignment.vertex[b];
  });
  return order;
}

std::vector<double> sigma_embedding(double sigma, std::size_t dim) {
  std::vector<double> e(dim);
  const std::size_t half = dim / 2;
  const double t = 1000.0 * sigma;
  for (std::size_t k = 0; k < half; ++k) {
    const double f = std::exp(-std::log(10000.0) * static_cast<double>(k) / static_cast<double>(half));
    e[2 * k] = std::sin(t * f);
    e[2 * k + 1] = std::cos(t * f);
  }
  return e;
}

template <typename T>
T gelu(T x) {
  constexpr T c = static_cast<T>(0.7978845608028654);  // sqrt(2/pi)
  return T{0.5} * x * (T{1} + std::tanh(c * (x + static_cast<T>(0.044715) * x * x * x)));
}

template <typename T>
T gelu_grad(T x) {
  constexpr T c = static_cast<T>(0.7978845608028654);
  constexpr T a = static_cast<T>(0.044715);
  const T th = std::tanh(c * (x + a * x * x * x));
  return T{0.5} * (T{1} + th) + T{0.5} * x * (T{1} - th * th) * c * (T{1} + T{3} * a * x * x);
}

namespace {

constexpr double kLnEps = 1e-6;

template <typename T>
BasicTensor<T> linear(std::span<const T> x, std::size_t m, const BasicTensor<T>& w,
                      const BasicTensor<T>& b, Exec exec) {
  const std::size_t k = w.extent(0);
  const std::size_t n = w.extent(1);
  BasicTensor<T> y({m, n});
  kernels::gemm<T>(x, w.data(), y.data(), m, k, n, false, exec);
  kernels::add_row_bias<T>(y.data(), b.data(), m, n);
  return y;
}

template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& b,
                      Exec exec) {
  return linear<T>(x.data(), x.extent(0), w, b, exec);
}

// Accumulates dw, db; returns dx when asked.
template <typename T>
BasicTensor<T> linear_backward(std::span<const T> x, std::span<const T> dy, std::size_t m,
                               const BasicTensor<T>& w, BasicTensor<T>& dw, BasicTensor<T>& db,
                               bool need_dx, Exec exec) {
  const std::size_t k = w.extent(0);
  const std::size_t n = w.extent(1);
  kernels::gemm_tn_acc<T>(x, dy, dw.data(), m, k, n, exec);
  kernels::col_sum_acc<T>(dy, db.data(), m, n);
  if (!need_dx) return {};
  BasicTensor<T> dx({m, k});
  kernels::gemm_nt<T>(dy, w.data(), dx.data(), m, n, k, false, exec);
  return dx;
}

template <typename T>
void layer_norm(const BasicTensor<T>& x, BasicTensor<T>& n, std::vector<T>& rstd) {
  const std::size_t S = x.extent(0);
  const std::size_t D = x.extent(1);
  n = BasicTensor<T>({S, D});
  rstd.assign(S, T{0});
  for (std::size_t i = 0; i < S; ++i) {
    auto xi = x.row(i);
    T mean{0};
    for (T v : xi) mean += v;
    mean /= static_cast<T>(D);
    T var{0};
    for (T v : xi) var += (v - mean) * (v - mean);
    var /= static_cast<T>(D);
    const T r = T{1} / std::sqrt(var + static_cast<T>(kLnEps));
    rstd[i] = r;
    auto ni = n.row(i);
    for (std::size_t c = 0; c < D; ++c) ni[c] = (xi[c] - mean) * r;
  }
}

// dx += rstd * (dn - mean(dn) - n * mean(dn * n))
template <typename T>
void layer_norm_backward(const BasicTensor<T>& dn, const BasicTensor<T>& n,
                         const std::vector<T>& rstd, BasicTensor<T>& dx) {
  const std::size_t S = n.extent(0);
  const std::size_t D = n.extent(1);
  for (std::size_t i = 0; i < S; ++i) {
    auto g = dn.row(i);
    auto ni = n.row(i);
    T m1{0}, m2{0};
    for (std::size_t c = 0; c < D; ++c) {
      m1 += g[c];
      m2 += g[c] * ni[c];
    }
    m1 /= static_cast<T>(D);
    m2 /= static_cast<T>(D);
    auto out = dx.row(i);
    for (std::size_t c = 0; c < D; ++c) out[c] += rstd[i] * (g[c] - m1 - ni[c] * m2);
  }
}

// h = n * (1 + scale[g]) + shift[g], shift/scale read from columns of mod.
template <typename T>
BasicTensor<T> modulate(const BasicTensor<T>& n, const BasicTensor<T>& mod,
                        const std::vector<std::size_t>& group, std::size_t shift_at,
                        std::size_t scale_at) {
  const std::size_t S = n.extent(0);
  const std::size_t D = n.extent(1);
  BasicTensor<T> h({S, D});
  for (std::size_t i = 0; i < S; ++i) {
    auto m = mod.row(group[i]);
    auto ni = n.row(i);
    auto hi = h.row(i);
    for (std::size_t c = 0; c < D; ++c) {
      hi[c] = ni[c] * (T{1} + m[scale_at + c]) + m[shift_at + c];
    }
  }
  return h;
}

template <typename T>
BasicTensor<T> modulate_backward(const BasicTensor<T>& dh, const BasicTensor<T>& n,
                                 const BasicTensor<T>& mod, const std::vector<std::size_t>& group,
                                 std::size_t shift_at, std::size_t scale_at,
                                 BasicTensor<T>& dmod) {
  const std::size_t S = n.extent(0);
  const std::size_t D = n.extent(1);
  BasicTensor<T> dn({S, D});
  for (std::size_t i = 0; i < S; ++i) {
    auto m = mod.row(group[i]);
    auto dm = dmod.row(group[i]);
    auto g = dh.row(i);
    auto ni = n.row(i);
    auto out = dn.row(i);
    for (std::size_t c = 0; c < D; ++c) {
      out[c] = g[c] * (T{1} + m[scale_at + c]);
      dm[scale_at + c] += g[c] * ni[c];
      dm[shift_at + c] += g[c];
    }
  }
  return dn;
}

template <typename T>
BasicTensor<T> columns(const BasicTensor<T>& x, std::size_t begin, std::size_t end) {
  const std::size_t R = x.extent(0);
  BasicTensor<T> out({R, end - begin});
  for (std::size_t r = 0; r < R; ++r) {
    std::copy(x.row(r).begin() + begin, x.row(r).begin() + end, out.row(r).begin());
  }
  return out;
}

template <typename T>
void apply_gelu(const BasicTensor<T>& pre, BasicTensor<T>& out) {
  out = BasicTensor<T>(pre.shape());
  for (std::size_t i = 0; i < pre.size(); ++i) out[i] = gelu(pre[i]);
}

template <typename T>
void gelu_backward_inplace(BasicTensor<T>& d, const BasicTensor<T>& pre) {
  for (std::size_t i = 0; i < pre.size(); ++i) d[i] *= gelu_grad(pre[i]);
}

template <typename T>
void init_tensor(BasicTensor<T>& t, RngStream rng, double stddev) {
  for (auto& v : t.data()) v = static_cast<T>(rng.normal() * stddev);
}

}  // namespace

// ---------------------------------------------------------------------------
// model

template <typename T>
Model<T>::Model(ToyModelConfig config)
    : config_(std::move(config)),
      rope_(RopeLayout::standard(config_.rope, config_.rope_base)),
      params_(ModelParams<T>::zeros(config_)) {
  if (config_.rope.p > 0) {
    pool_ = build_simplex_pool(config_.pool_size, config_.rope.p / 2, config_.alpha);
  }
}

template <typename T>
void Model<T>::initialize(std::uint64_t seed, InitStyle style) {
  const RngStream root = RngStream(seed).split("init");
  const bool dense = style == InitStyle::dense;
  params_.visit([&](const std::string& name, BasicTensor<T>& t) {
    RngStream rng = root.split(name);
    const bool bias = t.rank() == 1;
    const bool is_mod = name.find("mod_w") != std::string::npos;
    const bool is_hub = name == "embed.hub";
    double sd;
    if (is_hub) {
      sd = 1.0;
    } else if (bias) {
      sd = dense ? 0.1 : 0.0;
    } else if (is_mod) {
      sd = (dense ? 0.5 : 0.1) / std::sqrt(static_cast<double>(t.extent(0)));
    } else {
      sd = 1.0 / std::sqrt(static_cast<double>(t.extent(0)));
      if (name.find("act_w") != std::string::npos || name.find("ff2_w") != std::string::npos ||
          name == "final.out_w") {
        sd *= 0.5;
      }
    }
    if (sd == 0.0) {
      t.fill(T{0});
    } else {
      init_tensor(t, rng, sd);
    }
  });
}

template <typename T>
BasicTensor<T> Model<T>::encode_actions(const BasicTensor<T>& actions, EncoderTape<T>* tape) const {
  const ActionLayout al = action_layout(config_.action_kind);
  if (actions.rank() != 2 || actions.extent(1) != al.fields()) {
    throw ShapeError("encode_actions: expected rows of " + std::to_string(al.fields()) +
                     " fields, got " + shape_to_string(actions.shape()));
  }
  const std::size_t R = actions.extent(0);
  const std::size_t B = config_.action_branch;
  const std::size_t nb = (al.discrete > 0 ? 1 : 0) + (al.continuous > 0 ? 1 : 0);
  EncoderTape<T> local;
  EncoderTape<T>& tp = tape ? *tape : local;
  tp.cat = BasicTensor<T>({R, nb * B});
  std::size_t col = 0;
  auto branch = [&](std::size_t begin, std::size_t end, const BasicTensor<T>& w,
                    const BasicTensor<T>& b, BasicTensor<T>& pre) {
    pre = linear(columns(actions, begin, end), w, b, exec_);
    for (std::size_t r = 0; r < R; ++r) {
      for (std::size_t c = 0; c < B; ++c) tp.cat.row(r)[col + c] = gelu(pre.row(r)[c]);
    }
    col += B;
  };
  if (al.discrete > 0) branch(0, al.discrete, params_.disc_w, params_.disc_b, tp.disc_pre);
  if (al.continuous > 0) {
    branch(al.discrete, al.fields(), params_.cont_w, params_.cont_b, tp.cont_pre);
  }
  tp.fuse_pre = linear(tp.cat, params_.fuse1_w, params_.fuse1_b, exec_);
  apply_gelu(tp.fuse_pre, tp.fuse);
  return linear(tp.fuse, params_.fuse2_w, params_.fuse2_b, exec_);
}

template <typename T>
BasicTensor<T> Model<T>::forward_batch(const TokenBatch<T>& batch,
                                       const AttentionSetup<T>& attention, ForwardTape<T>* tape,
                                       AttentionCounters* counters) const {
  const std::size_t S = batch.size();
  const std::size_t A = batch.agent_count;
  const std::size_t D = config_.model_dim;
  const std::size_t Cz = config_.latent_channels;
  const std::size_t E = config_.sigma_embed_dim;
  const std::size_t G = batch.sigmas.size();
  if (!attention.plan) throw std::invalid_argument("forward_batch: no attention plan");
  if (batch.latents.shape() != Shape{A, Cz}) {
    throw ShapeError("forward_batch: latents " + shape_to_string(batch.latents.shape()) +
                     " for " + std::to_string(A) + " agent tokens of " + std::to_string(Cz) +
                     " channels");
  }
  if (batch.action_row.size() != A || batch.sigma_group.size() != S || A > S) {
    throw ShapeError("forward_batch: token bookkeeping does not match the token count");
  }
  if (batch.angles.shape() != Shape{S, rope_.pairs()}) {
    throw ShapeError("forward_batch: angle table " + shape_to_string(batch.angles.shape()));
  }
  for (std::size_t i = 0; i < S; ++i) {
    if (batch.sigma_group[i] >= G) throw std::out_of_range("forward_batch: bad noise group");
    if ((i < A) == batch.coords[i].is_hub()) {
      throw std::invalid_argument("forward_batch: agent tokens must precede hub tokens");
    }
    if (batch.coords[i].is_hub() && batch.coords[i].hub_slot >= config_.hub_tokens) {
      throw std::out_of_range("forward_batch: hub slot outside K");
    }
  }
  for (std::size_t r : batch.action_row) {
    if (r >= batch.actions.extent(0)) throw std::out_of_range("forward_batch: bad action row");
  }
  if (attention.contexts && attention.contexts->size() != config_.layers) {
    throw ShapeError("forward_batch: one key/value context per layer is required");
  }
  if (attention.captures) attention.captures->resize(config_.layers);

  const AttentionPlan* plan = attention.plan;
  const Tensor64* angles = &batch.angles;
  if (tape) {
    tape->batch = batch;
    tape->plan = *attention.plan;
    plan = &tape->plan;
    angles = &tape->batch.angles;
    tape->layers.assign(config_.layers, {});
  }

  const BasicTensor<T> U = encode_actions(batch.actions, tape ? &tape->encoder : nullptr);
  BasicTensor<T> emb({G, E});
  for (std::size_t g = 0; g < G; ++g) {
    const auto e = sigma_embedding(batch.sigmas[g], E);
    for (std::size_t c = 0; c < E; ++c) emb.row(g)[c] = static_cast<T>(e[c]);
  }

  BasicTensor<T> x({S, D}, T{0});
  if (A > 0) {
    kernels::gemm<T>(batch.latents.data(), params_.in_w.data(), x.data().subspan(0, A * D), A, Cz,
                     D, false, exec_);
    kernels::add_row_bias<T>(x.data().subspan(0, A * D), params_.in_b.data(), A, D);
  }
  for (std::size_t i = A; i < S; ++i) {
    auto h = params_.hub.row(batch.coords[i].hub_slot);
    std::copy(h.begin(), h.end(), x.row(i).begin());
  }

  for (std::size_t l = 0; l < config_.layers; ++l) {
    const LayerParams<T>& lp = params_.layers[l];
    const BasicTensor<T> beta = linear(U, lp.act_w, lp.act_b, exec_);
    for (std::size_t i = 0; i < A; ++i) {
      auto b = beta.row(batch.action_row[i]);
      auto xi = x.row(i);
      for (std::size_t c = 0; c < D; ++c) xi[c] += b[c];
    }
    BasicTensor<T> mod = linear(emb, lp.mod_w, lp.mod_b, exec_);

    BasicTensor<T> n1;
    std::vector<T> rstd1;
    layer_norm(x, n1, rstd1);
    BasicTensor<T> h1 = modulate(n1, mod, batch.sigma_group, 0, D);
    KvContext<T>* ctx = attention.contexts ? &(*attention.contexts)[l] : nullptr;
    KvCapture<T>* cap = attention.captures ? &(*attention.captures)[l] : nullptr;
    const BasicTensor<T> a = mha_forward(h1, lp.attn, *plan, *angles, exec_,
                                         tape ? &tape->layers[l].mha : nullptr, counters, ctx, cap);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += a[i];

    BasicTensor<T> n2;
    std::vector<T> rstd2;
    layer_norm(x, n2, rstd2);
    BasicTensor<T> h2 = modulate(n2, mod, batch.sigma_group, 2 * D, 3 * D);
    BasicTensor<T> f_pre = linear(h2, lp.ff1_w, lp.ff1_b, exec_);
    BasicTensor<T> f;
    apply_gelu(f_pre, f);
    const BasicTensor<T> g = linear(f, lp.ff2_w, lp.ff2_b, exec_);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += g[i];

    if (tape) {
      LayerTape<T>& lt = tape->layers[l];
      lt.n1 = std::move(n1);
      lt.rstd1 = std::move(rstd1);
      lt.n2 = std::move(n2);
      lt.rstd2 = std::move(rstd2);
      lt.h2 = std::move(h2);
      lt.f_pre = std::move(f_pre);
      lt.f = std::move(f);
      lt.mod = std::move(mod);
    }
  }

  BasicTensor<T> nf;
  std::vector<T> rstdf;
  layer_norm(x, nf, rstdf);
  BasicTensor<T> modf = linear(emb, params_.final_mod_w, params_.final_mod_b, exec_);
  BasicTensor<T> hf = modulate(nf, modf, batch.sigma_group, 0, D);
  BasicTensor<T> out = linear<T>(hf.data().subspan(0, A * D), A, params_.out_w, params_.out_b, exec_);
  if (tape) {
    tape->actions_u = U;
    tape->emb = std::move(emb);
    tape->nf = std::move(nf);
    tape->rstdf = std::move(rstdf);
    tape->hf = std::move(hf);
    tape->modf = std::move(modf);
  }
  return out;
}

template <typename T>
void Model<T>::backward(const ForwardTape<T>& tape, const BasicTensor<T>& d_out,
                        ModelParams<T>& grads) const {
  const TokenBatch<T>& batch = tape.batch;
  const std::size_t S = batch.size();
  const std::size_t A = batch.agent_count;
  const std::size_t D = config_.model_dim;
  const std::size_t Cz = config_.latent_channels;
  const std::size_t G = batch.sigmas.size();
  const std::size_t R = batch.actions.extent(0);
  if (tape.layers.size() != config_.layers) throw std::logic_error("backward: tape is empty");
  if (d_out.size() != A * Cz) {
    throw ShapeError("backward: d_out " + shape_to_string(d_out.shape()) + " for " +
                     std::to_string(A) + " agent tokens");
  }
  if (grads.in_w.shape() != params_.in_w.shape()) grads = ModelParams<T>::zeros(config_);

  // out = hf[:A] out_w + out_b
  BasicTensor<T> dhf({S, D}, T{0});
  {
    BasicTensor<T> d = linear_backward<T>(tape.hf.data().subspan(0, A * D), d_out.data(), A,
                                          params_.out_w, grads.out_w, grads.out_b, true, exec_);
    std::copy(d.data().begin(), d.data().end(), dhf.data().begin());
  }
  BasicTensor<T> dmodf({G, 2 * D}, T{0});
  const BasicTensor<T> dnf = modulate_backward(dhf, tape.nf, tape.modf, batch.sigma_group, 0, D, dmodf);
  linear_backward<T>(tape.emb.data(), dmodf.data(), G, params_.final_mod_w, grads.final_mod_w,
                     grads.final_mod_b, false, exec_);
  BasicTensor<T> dx({S, D}, T{0});
  layer_norm_backward(dnf, tape.nf, tape.rstdf, dx);

  BasicTensor<T> dU({R, D}, T{0});
  for (std::size_t l = config_.layers; l-- > 0;) {
    const LayerParams<T>& lp = params_.layers[l];
    LayerParams<T>& lg = grads.layers[l];
    const LayerTape<T>& lt = tape.layers[l];
    BasicTensor<T> dmod({G, 4 * D}, T{0});

    // feedforward residual
    BasicTensor<T> df =
        linear_backward<T>(lt.f.data(), dx.data(), S, lp.ff2_w, lg.ff2_w, lg.ff2_b, true, exec_);
    gelu_backward_inplace(df, lt.f_pre);
    const BasicTensor<T> dh2 =
        linear_backward<T>(lt.h2.data(), df.data(), S, lp.ff1_w, lg.ff1_w, lg.ff1_b, true, exec_);
    const BasicTensor<T> dn2 = modulate_backward(dh2, lt.n2, lt.mod, batch.sigma_group, 2 * D, 3 * D, dmod);
    layer_norm_backward(dn2, lt.n2, lt.rstd2, dx);

    // attention residual
    AttentionGrads<T> ag;
    std::swap(ag.wq, lg.attn.wq);
    std::swap(ag.wk, lg.attn.wk);
    std::swap(ag.wv, lg.attn.wv);
    std::swap(ag.wo, lg.attn.wo);
    const BasicTensor<T> dh1 = mha_backward(lt.mha, lp.attn, dx, ag, exec_);
    std::swap(ag.wq, lg.attn.wq);
    std::swap(ag.wk, lg.attn.wk);
    std::swap(ag.wv, lg.attn.wv);
    std::swap(ag.wo, lg.attn.wo);
    const BasicTensor<T> dn1 = modulate_backward(dh1, lt.n1, lt.mod, batch.sigma_group, 0, D, dmod);
    layer_norm_backward(dn1, lt.n1, lt.rstd1, dx);
    linear_backward<T>(tape.emb.data(), dmod.data(), G, lp.mod_w, lg.mod_w, lg.mod_b, false, exec_);

    // action bias, broadcast over each (agent, frame)
    BasicTensor<T> dbeta({R, D}, T{0});
    for (std::size_t i = 0; i < A; ++i) {
      auto src = dx.row(i);
      auto dst = dbeta.row(batch.action_row[i]);
      for (std::size_t c = 0; c < D; ++c) dst[c] += src[c];
    }
    const BasicTensor<T> du = linear_backward<T>(tape.actions_u.data(), dbeta.data(), R, lp.act_w,
                                                 lg.act_w, lg.act_b, true, exec_);
    for (std::size_t i = 0; i < dU.size(); ++i) dU[i] += du[i];
  }

  // token embedding
  if (A > 0) {
    linear_backward<T>(batch.latents.data(), dx.data().subspan(0, A * D), A, params_.in_w,
                       grads.in_w, grads.in_b, false, exec_);
  }
  for (std::size_t i = A; i < S; ++i) {
    auto dst = grads.hub.row(batch.coords[i].hub_slot);
    auto src = dx.row(i);
    for (std::size_t c = 0; c < D; ++c) dst[c] += src[c];
  }

  // action encoder
  const EncoderTape<T>& et = tape.encoder;
  BasicTensor<T> dfuse = linear_backward<T>(et.fuse.data(), dU.data(), R, params_.fuse2_w,
                                            grads.fuse2_w, grads.fuse2_b, true, exec_);
  gelu_backward_inplace(dfuse, et.fuse_pre);
  const BasicTensor<T> dcat = linear_backward<T>(et.cat.data(), dfuse.data(), R, params_.fuse1_w,
                                                 grads.fuse1_w, grads.fuse1_b, true, exec_);
  const ActionLayout al = action_layout(config_.action_kind);
  const std::size_t B = config_.action_branch;
  std::size_t col = 0;
  auto branch = [&](std::size_t begin, std::size_t end, const BasicTensor<T>& w,
                    BasicTensor<T>& gw, BasicTensor<T>& gb, const BasicTensor<T>& pre) {
    BasicTensor<T> d = columns(dcat, col, col + B);
    gelu_backward_inplace(d, pre);
    const BasicTensor<T> in = columns(batch.actions, begin, end);
    linear_backward<T>(in.data(), d.data(), R, w, gw, gb, false, exec_);
    col += B;
  };
  if (al.discrete > 0) {
    branch(0, al.discrete, params_.disc_w, grads.disc_w, grads.disc_b, et.disc_pre);
  }
  if (al.continuous > 0) {
    branch(al.discrete, al.fields(), params_.cont_w, grads.cont_w, grads.cont_b, et.cont_pre);
  }
}

template <typename T>
TokenBatch<T> Model<T>::sequence_batch(const TopologySpec& spec, const SequenceInputs<T>& in) const {
  spec.validate();
  const std::size_t Cz = config_.latent_channels;
  const std::size_t F = config_.action_fields();
  if (spec.H != config_.height || spec.W != config_.width || spec.n != config_.block_frames ||
      spec.K > config_.hub_tokens) {
    throw ShapeError("forward: topology " + spec.describe() + " does not match the model");
  }
  if (in.latents.shape() != Shape{spec.P, spec.T, spec.H, spec.W, Cz}) {
    throw ShapeError("forward: latents " + shape_to_string(in.latents.shape()) + " but " +
                     spec.describe() + " needs " +
                     shape_to_string({spec.P, spec.T, spec.H, spec.W, Cz}));
  }
  if (in.actions.rank() != 3 || in.actions.extent(0) != spec.P || in.actions.extent(1) < spec.T ||
      in.actions.extent(2) != F) {
    throw ShapeError("forward: actions " + shape_to_string(in.actions.shape()) + " must cover " +
                     std::to_string(spec.P) + " agents x " + std::to_string(spec.T) +
                     " frames x " + std::to_string(F) + " fields");
  }
  if (in.sigmas.size() != spec.blocks()) {
    throw ShapeError("forward: " + std::to_string(in.sigmas.size()) + " noise levels for " +
                     std::to_string(spec.blocks()) + " blocks");
  }
  // Without an agent band the vertices are only labels.
  validate_assignment(in.assignment, config_.rope.p > 0 ? config_.pool_size
                                                        : std::max(config_.pool_size, spec.P));
  if (in.assignment.agents() != spec.P) {
    throw ShapeError("forward: vertex assignment covers " + std::to_string(in.assignment.agents()) +
                     " agents, P=" + std::to_string(spec.P));
  }

  TokenBatch<T> b;
  b.coords = build_layout(spec);
  b.agent_count = spec.agent_tokens();
  b.latents = in.latents;
  b.latents.reshape({b.agent_count, Cz});
  b.actions = BasicTensor<T>({spec.P * spec.T, F});
  for (std::size_t p = 0; p < spec.P; ++p) {
    for (std::size_t t = 0; t < spec.T; ++t) {
      for (std::size_t f = 0; f < F; ++f) b.actions.at({p * spec.T + t, f}) = in.actions.at({p, t, f});
    }
  }
  b.action_row.resize(b.agent_count);
  b.sigma_group.resize(b.coords.size());
  for (std::size_t i = 0; i < b.coords.size(); ++i) {
    const auto& c = b.coords[i];
    if (i < b.agent_count) b.action_row[i] = static_cast<std::size_t>(c.identity) * spec.T + c.t;
    b.sigma_group[i] = c.block;
  }
  b.sigmas = in.sigmas;
  b.angles = rope_table(rope_, pool_, in.assignment, b.coords, spec.extent());
  return b;
}

template <typename T>
BasicTensor<T> Model<T>::forward(const SequenceInputs<T>& in, AttentionMode mode,
                                 ForwardTape<T>* tape, AttentionCounters* counters,
                                 std::optional<std::size_t> window_override) const {
  if (in.latents.rank() != 5) {
    throw ShapeError("forward: latents must be (P, T, H, W, C), got " +
                     shape_to_string(in.latents.shape()));
  }
  TopologySpec spec = config_.topology(in.latents.extent(0), in.latents.extent(1), mode);
  if (window_override) spec.window = window_override;
  const TokenBatch<T> batch = sequence_batch(spec, in);
  const auto order = canonical_agent_order(in.assignment);
  const AttentionPlan plan = plan_for_sequence(spec, mode, order);
  BasicTensor<T> out = forward_batch(batch, {&plan, nullptr, nullptr}, tape, counters);
  out.reshape(in.latents.shape());
  return out;
}

template class Model<float>;
template class Model<double>;
template struct ModelParams<float>;
template struct ModelParams<double>;
template float gelu<float>(float);
template double gelu<double>(double);
template float gelu_grad<float>(float);
template double gelu_grad<double>(double);

}  // namespace hubsim
