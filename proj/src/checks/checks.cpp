#include "hubsim/checks.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "hubsim/attention.hpp"
#include "hubsim/errors.hpp"
#include "hubsim/simplex.hpp"
#include "hubsim/topology.hpp"
#include "hubsim/world.hpp"

namespace hubsim {

std::string CheckResult::line() const {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(2);
  os << (passed ? "[PASS] " : "[FAIL] ") << id << ' ' << name << " (" << seconds << " s, limit "
     << budget_seconds << " s): " << detail;
  return os.str();
}

void ProbeReport::fail(const std::string& why) {
  if (passed) detail = why;
  passed = false;
}

namespace {

using Clock = std::chrono::steady_clock;

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(3);
  os << v;
  return os.str();
}

// Runs body, times it, applies the runtime limit, and turns exceptions into
// failures.
CheckResult timed(int id, const char* name, double budget,
                  const std::function<bool(std::string&)>& body) {
  CheckResult r;
  r.id = id;
  r.name = name;
  r.budget_seconds = budget;
  const auto start = Clock::now();
  try {
    r.passed = body(r.detail);
  } catch (const std::exception& e) {
    r.passed = false;
    r.detail = std::string("exception: ") + e.what();
  }
  r.seconds = std::chrono::duration<double>(Clock::now() - start).count();
  if (r.seconds > budget) {
    r.passed = false;
    r.detail += "; over the time limit";
  }
  return r;
}

template <typename T>
std::size_t agent_stride(const BasicTensor<T>& t) {
  return t.size() / t.extent(0);
}

// Copies of the inputs with agent i taken from agent perm[i].
template <typename T>
BasicTensor<T> permute_agents(const BasicTensor<T>& t, const std::vector<std::size_t>& perm) {
  BasicTensor<T> out(t.shape());
  const std::size_t s = agent_stride(t);
  for (std::size_t i = 0; i < perm.size(); ++i) {
    std::copy(t.data().begin() + perm[i] * s, t.data().begin() + (perm[i] + 1) * s,
              out.data().begin() + i * s);
  }
  return out;
}

// Frame range [f0, f1) of every agent equal bit-for-bit.
template <typename T>
bool frames_identical(const BasicTensor<T>& a, const BasicTensor<T>& b, std::size_t f0,
                      std::size_t f1) {
  const std::size_t P = a.extent(0), frames = a.extent(1), inner = a.size() / (P * frames);
  for (std::size_t p = 0; p < P; ++p) {
    for (std::size_t i = (p * frames + f0) * inner; i < (p * frames + f1) * inner; ++i) {
      if (a[i] != b[i]) return false;
    }
  }
  return true;
}

template <typename T>
void perturb_frames(SequenceInputs<T>& x, std::size_t f0, std::size_t f1, const ActionLayout& al) {
  const std::size_t P = x.latents.extent(0), frames = x.latents.extent(1);
  const std::size_t inner = x.latents.size() / (P * frames);
  for (std::size_t p = 0; p < P; ++p) {
    for (std::size_t i = (p * frames + f0) * inner; i < (p * frames + f1) * inner; ++i) {
      x.latents[i] += T(0.75) + T(0.01) * static_cast<T>(i % 7);
    }
    for (std::size_t t = f0; t < f1 && t < x.actions.extent(1); ++t) {
      for (std::size_t f = 0; f < al.fields(); ++f) {
        T& a = x.actions.at({p, t, f});
        a = f < al.discrete ? T(1) - a : a + T(0.9);
      }
    }
  }
}

template <typename T>
SequenceInputs<T> random_inputs(const ToyModelConfig& c, std::size_t P, std::size_t frames,
                                const VertexAssignment& assignment, RngStream rng) {
  SequenceInputs<T> in;
  in.latents = BasicTensor<T>({P, frames, c.height, c.width, c.latent_channels});
  for (auto& v : in.latents.data()) v = static_cast<T>(rng.normal());
  const ActionLayout al = action_layout(c.action_kind);
  in.actions = BasicTensor<T>({P, frames, al.fields()});
  for (std::size_t i = 0; i < in.actions.size(); ++i) {
    in.actions[i] = i % al.fields() < al.discrete ? T(rng.uniform() < 0.3 ? 1 : 0)
                                                  : static_cast<T>(rng.normal());
  }
  in.sigmas.resize(frames / c.block_frames);
  for (auto& s : in.sigmas) s = rng.uniform();
  in.assignment = assignment;
  return in;
}

std::vector<std::size_t> random_permutation(std::size_t n, RngStream& rng) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), 0);
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform() * static_cast<double>(i));
    std::swap(p[i - 1], p[std::min(j, i - 1)]);
  }
  return p;
}

}  // namespace

template <typename T>
ProbeReport causality_probe(const Model<T>& model, const SequenceInputs<T>& in, AttentionMode mode) {
  ProbeReport rep;
  const std::size_t n = model.config().block_frames;
  const std::size_t P = in.latents.extent(0), frames = in.latents.extent(1);
  const std::size_t B = frames / n;
  const ActionLayout al = action_layout(model.config().action_kind);
  const BasicTensor<T> base = model.forward(in, mode);

  for (std::size_t k = 1; k < B; ++k) {
    SequenceInputs<T> x = in;
    perturb_frames(x, k * n, frames, al);
    for (std::size_t b = k; b < B; ++b) x.sigmas[b] = x.sigmas[b] < 0.5 ? x.sigmas[b] + 0.4 : x.sigmas[b] - 0.4;
    const BasicTensor<T> out = model.forward(x, mode);
    ++rep.probes;
    if (!frames_identical(base, out, 0, k * n)) {
      rep.fail("perturbing blocks >= " + std::to_string(k) + " changed an earlier block");
    }
    if (frames_identical(base, out, k * n, (k + 1) * n)) {
      rep.fail("perturbing block " + std::to_string(k) + " left its own output unchanged");
    }
  }

  const std::size_t inner = in.latents.size() / (P * frames);
  const std::size_t C = model.config().latent_channels;
  for (std::size_t p = 0; p < P; ++p) {
    for (std::size_t t = n; t < frames; ++t) {
      for (std::size_t cell = 0; cell < inner / C; ++cell) {
        SequenceInputs<T> x = in;
        for (std::size_t c = 0; c < C; ++c) x.latents[(p * frames + t) * inner + cell * C + c] += T(1);
        const BasicTensor<T> out = model.forward(x, mode);
        ++rep.probes;
        const std::size_t f0 = (t / n) * n;
        if (!frames_identical(base, out, 0, f0)) {
          rep.fail("token (agent " + std::to_string(p) + ", frame " + std::to_string(t) + ", cell " +
                   std::to_string(cell) + ") reached an earlier block");
        }
      }
    }
  }
  if (rep.passed) rep.detail = std::to_string(rep.probes) + " probes bit-identical";
  return rep;
}

template <typename T>
ProbeReport equivariance_probe(const Model<T>& model, const SequenceInputs<T>& in,
                               const std::vector<std::size_t>& perm, AttentionMode mode) {
  ProbeReport rep;
  rep.probes = 1;
  const BasicTensor<T> base = model.forward(in, mode);
  SequenceInputs<T> x = in;
  x.latents = permute_agents(in.latents, perm);
  x.actions = permute_agents(in.actions, perm);
  for (std::size_t i = 0; i < perm.size(); ++i) x.assignment.vertex[i] = in.assignment.vertex[perm[i]];
  const BasicTensor<T> out = model.forward(x, mode);
  const BasicTensor<T> expect = permute_agents(base, perm);
  std::size_t mismatched = 0;
  double worst = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (out[i] != expect[i]) {
      ++mismatched;
      worst = std::max(worst, std::abs(static_cast<double>(out[i]) - static_cast<double>(expect[i])));
    }
  }
  if (mismatched) {
    rep.fail(std::to_string(mismatched) + " elements differ, worst " + fmt(worst));
  } else {
    rep.detail = "bit-identical";
  }
  return rep;
}

template <typename T>
StreamingReport streaming_probe(const Model<T>& model, const BasicTensor<T>& first_block,
                                const BasicTensor<T>& actions, const VertexAssignment& assignment,
                                std::size_t frames, double tolerance, std::uint64_t seed) {
  StreamingReport rep;
  const ToyModelConfig& c = model.config();
  const std::size_t P = first_block.extent(0), n = c.block_frames;
  RolloutOptions o;
  o.frames = frames;
  o.record_steps = true;
  const RolloutResult<T> res = rollout<T>(model, first_block, actions, assignment, DenoiseSchedule{},
                                          RngStream(seed), o);
  const std::size_t inner = c.height * c.width * c.latent_channels;
  for (const auto& st : res.steps) {
    SequenceInputs<T> in;
    in.latents = BasicTensor<T>({P, frames, c.height, c.width, c.latent_channels}, T{0});
    in.sigmas.assign(frames / n, 0.0);
    for (std::size_t p = 0; p < P; ++p) {
      for (std::size_t t = 0; t < st.block * n; ++t) {
        for (std::size_t i = 0; i < inner; ++i) {
          in.latents[(p * frames + t) * inner + i] = res.context[(p * frames + t) * inner + i];
        }
      }
      for (std::size_t t = 0; t < n; ++t) {
        for (std::size_t i = 0; i < inner; ++i) {
          in.latents[(p * frames + st.block * n + t) * inner + i] = st.input[(p * n + t) * inner + i];
        }
      }
    }
    in.sigmas[st.block] = st.sigma;
    in.actions = actions;
    in.assignment = assignment;
    const BasicTensor<T> full = model.forward(in, AttentionMode::causal_hub);
    for (std::size_t p = 0; p < P; ++p) {
      for (std::size_t t = 0; t < n; ++t) {
        for (std::size_t i = 0; i < inner; ++i) {
          const double d = std::abs(static_cast<double>(full[(p * frames + st.block * n + t) * inner + i]) -
                                    static_cast<double>(st.velocity[(p * n + t) * inner + i]));
          rep.max_abs_diff = std::max(rep.max_abs_diff, d);
        }
      }
    }
  }
  const TopologySpec& s = res.spec;
  const std::size_t w = s.window ? std::min(*s.window, s.T) : s.T;
  rep.steps = res.steps.size();
  rep.peak_tokens = res.peak_cached_tokens;
  rep.bound_tokens = s.P * w * s.L() + w * s.K;
  rep.foreign_reads = res.foreign_reads;
  rep.probe.probes = rep.steps;
  if (rep.steps == 0) rep.probe.fail("no denoise steps recorded");
  if (!(rep.max_abs_diff <= tolerance)) rep.probe.fail("max |diff| " + fmt(rep.max_abs_diff) + " > " + fmt(tolerance));
  if (rep.peak_tokens > rep.bound_tokens) {
    rep.probe.fail("cache peak " + std::to_string(rep.peak_tokens) + " > bound " + std::to_string(rep.bound_tokens));
  }
  if (rep.foreign_reads) rep.probe.fail(std::to_string(rep.foreign_reads) + " foreign cache reads");
  if (rep.probe.passed) {
    rep.probe.detail = std::to_string(rep.steps) + " steps, max |diff| " + fmt(rep.max_abs_diff) +
                       ", cache peak " + std::to_string(rep.peak_tokens) + " <= " +
                       std::to_string(rep.bound_tokens) + " tokens/layer";
  }
  return rep;
}

template <typename To, typename From>
Model<To> convert_model(const Model<From>& model) {
  Model<To> out(model.config());
  out.initialize(0);
  out.set_exec(model.exec());
  std::vector<const BasicTensor<From>*> src;
  model.params().visit([&](const std::string&, const BasicTensor<From>& t) { src.push_back(&t); });
  std::size_t i = 0;
  out.params().visit([&](const std::string& name, BasicTensor<To>& t) {
    if (i >= src.size() || src[i]->shape() != t.shape()) {
      throw ShapeError("convert_model: parameter " + name + " does not line up");
    }
    t = src[i++]->template cast<To>();
  });
  if (i != src.size()) throw ShapeError("convert_model: parameter count mismatch");
  return out;
}

TrainConfig CheckOptions::default_train() {
  TrainConfig t;
  t.lr = 1e-2;
  return t;
}

// ---------------------------------------------------------------------------

CheckResult check_simplex_geometry(const CheckOptions&) {
  return timed(1, "simplex-geometry", 1.0, [](std::string& detail) {
    double worst = 0.0;
    for (std::size_t V = 2; V <= 16; ++V) {
      const double d2 = 2.0 * V / (V - 1.0), ip = -1.0 / (V - 1.0);
      for (auto [emb, d_half] : {std::pair{SimplexEmbedding::helmert, V - 1},
                                 std::pair{SimplexEmbedding::helmert, V + 2},
                                 std::pair{SimplexEmbedding::centered_one_hot, V}}) {
        const SimplexPool pool = build_simplex_pool(V, d_half, 1.0, emb);
        for (std::size_t a = 0; a < V; ++a) {
          const auto va = pool.vertex(a);
          double nn = 0.0;
          for (double x : va) nn += x * x;
          worst = std::max(worst, std::abs(nn - 1.0));
          for (std::size_t b = a + 1; b < V; ++b) {
            const auto vb = pool.vertex(b);
            double dot = 0.0, dist = 0.0;
            for (std::size_t k = 0; k < d_half; ++k) {
              dot += va[k] * vb[k];
              dist += (va[k] - vb[k]) * (va[k] - vb[k]);
            }
            worst = std::max({worst, std::abs(dot - ip), std::abs(dist - d2)});
          }
        }
      }
    }
    detail = "V = 2..16, max deviation " + fmt(worst) + " (limit 1e-12)";
    return worst <= 1e-12;
  });
}

CheckResult check_complex_equidistance(const CheckOptions&) {
  return timed(2, "complex-equidistance", 1.0, [](std::string& detail) {
    double spread = 0.0, small_angle = 0.0;
    for (std::size_t V = 2; V <= 16; ++V) {
      for (std::size_t d_half : {V, V + 3}) {
        for (double alpha : {1.0, 0.5, 0.1, 0.05, 0.01}) {
          const SimplexPool pool =
              build_simplex_pool(V, d_half, alpha, SimplexEmbedding::centered_one_hot);
          const VertexAssignment a = identity_assignment(V);
          const double ref = complex_pair_distance(pool, a, 0, 1);
          for (std::size_t p = 0; p < V; ++p) {
            for (std::size_t q = p + 1; q < V; ++q) {
              spread = std::max(spread, std::abs(complex_pair_distance(pool, a, p, q) - ref));
            }
          }
          if (alpha <= 0.1) {
            const double approx = alpha * alpha * 2.0 * V / (V - 1.0);
            small_angle = std::max(small_angle, std::abs(ref / approx - 1.0));
          }
        }
      }
    }
    detail = "pairwise spread " + fmt(spread) + " (limit 1e-12), small-angle rel err " +
             fmt(small_angle) + " (limit 1%)";
    return spread <= 1e-12 && small_angle <= 0.01;
  });
}

CheckResult check_sparse_dense_oracle(const CheckOptions& o) {
  return timed(3, "sparse-dense-oracle", 60.0, [&](std::string& detail) {
    static const std::pair<std::size_t, std::size_t> grids[] = {
        {1, 1}, {1, 2}, {2, 1}, {1, 3}, {3, 1}, {2, 2}, {1, 4}, {1, 5}, {2, 3}, {3, 2}, {1, 6}, {6, 1}};
    const RngStream root = RngStream(o.seed).split("oracle");
    double worst = 0.0;
    std::string worst_spec;
    for (std::size_t i = 0; i < o.oracle_specs; ++i) {
      RngStream r = root.split(i);
      auto pick = [&](std::size_t lo, std::size_t hi) {
        return lo + std::min(hi - lo, static_cast<std::size_t>(r.uniform() * static_cast<double>(hi - lo + 1)));
      };
      TopologySpec s;
      s.P = pick(1, 4);
      s.T = pick(1, 4);
      std::vector<std::size_t> divisors;
      for (std::size_t d = 1; d <= s.T; ++d) {
        if (s.T % d == 0) divisors.push_back(d);
      }
      s.n = divisors[pick(0, divisors.size() - 1)];
      const auto [h, w] = grids[pick(0, std::size(grids) - 1)];
      s.H = h;
      s.W = w;
      s.K = pick(0, 8);
      if (r.uniform() < 0.3) s.window = s.n * pick(1, 2);
      const std::size_t S = s.sequence_length(), dim = 8;
      Tensor q({S, dim}), k({S, dim}), v({S, dim});
      for (auto* t : {&q, &k, &v}) {
        for (auto& x : t->data()) x = static_cast<float>(r.normal());
      }
      std::vector<std::size_t> order;
      if (r.uniform() < 0.5) order = random_permutation(s.P, r);
      const Tensor sparse = sparse_hub_attention(q, k, v, s, Exec::parallel, nullptr, order);
      const Tensor dense = masked_attention_reference(q, k, v, mask_for_mode(s, AttentionMode::causal_hub));
      for (std::size_t j = 0; j < sparse.size(); ++j) {
        const double d = std::abs(static_cast<double>(sparse[j]) - dense[j]);
        if (std::isnan(d) || d > worst) {
          worst = std::isnan(d) ? INFINITY : d;
          worst_spec = s.describe();
        }
      }
    }
    detail = std::to_string(o.oracle_specs) + " specs, max |sparse - dense| " + fmt(worst) +
             " (limit 1e-5)";
    if (worst > 1e-5) detail += " at " + worst_spec;
    return o.oracle_specs >= 200 && worst <= 1e-5;
  });
}

CheckResult check_mask_correctness(const CheckOptions&) {
  return timed(4, "mask-correctness", 10.0, [](std::string& detail) {
    std::size_t specs = 0, bad_mask = 0, bad_count = 0, bad_plan = 0;
    for (std::size_t P = 1; P <= 3; ++P) {
      for (std::size_t T = 1; T <= 4; ++T) {
        for (std::size_t n = 1; n <= T; ++n) {
          if (T % n) continue;
          for (auto [H, W] : {std::pair<std::size_t, std::size_t>{1, 1}, {1, 2}, {2, 1}, {2, 2}}) {
            for (std::size_t K = 0; K <= 2; ++K) {
              TopologySpec s;
              s.P = P;
              s.T = T;
              s.n = n;
              s.H = H;
              s.W = W;
              s.K = K;
              ++specs;
              const auto coords = build_layout(s);
              const MaskMatrix hub = hub_mask(s), causal = causal_hub_mask(s);
              for (std::size_t i = 0; i < coords.size(); ++i) {
                for (std::size_t j = 0; j < coords.size(); ++j) {
                  const bool topo = coords[i].identity == coords[j].identity || coords[i].is_hub() ||
                                    coords[j].is_hub();
                  const bool brute = (coords[j].t / n <= coords[i].t / n) && topo;
                  if (hub(i, j) != topo || causal(i, j) != brute) ++bad_mask;
                }
              }
              if (hub.count() != hub_mask_true_count(s) ||
                  causal.count() != causal_hub_mask_true_count(s)) {
                ++bad_count;
              }
              if (plan_for_sequence(s, AttentionMode::causal_hub).to_mask() != causal) ++bad_plan;
            }
          }
        }
      }
    }
    detail = std::to_string(specs) + " specs: " + std::to_string(bad_mask) + " entry mismatches, " +
             std::to_string(bad_count) + " count mismatches, " + std::to_string(bad_plan) +
             " plan mismatches";
    return bad_mask == 0 && bad_count == 0 && bad_plan == 0;
  });
}

CheckResult check_scaling(const CheckOptions& o) {
  return timed(5, "scaling", 600.0, [&](std::string& detail) {
    std::vector<double> x, sparse, dense;
    for (std::size_t P : {8, 16, 32}) {
      TopologySpec s;
      s.P = P;
      s.T = 24;
      s.n = 3;
      s.H = 2;
      s.W = 2;
      s.K = 2;
      x.push_back(static_cast<double>(P));
      sparse.push_back(static_cast<double>(block_pair_count(s, CostMode::sparse_hub)));
      dense.push_back(static_cast<double>(block_pair_count(s, CostMode::dense)));
    }
    const double a_sparse = fit_loglog_slope(x, sparse), a_dense = fit_loglog_slope(x, dense);
    const auto records = run_benchmark(o.bench);
    const auto attn = [](const BenchRecord& r) { return r.median_attention_ns; };
    const double m_sparse = fit_scaling_exponent(records, CostMode::sparse_hub, attn);
    const double m_dense = fit_scaling_exponent(records, CostMode::dense, attn);
    bool counts = true;
    for (const auto& r : records) counts = counts && r.counts_match();
    detail = "analytic slopes sparse " + fmt(a_sparse) + " (<= 1.1), dense " + fmt(a_dense) +
             " (2 +- 0.01); measured attention exponents sparse " + fmt(m_sparse) + " (< 1.3), dense " +
             fmt(m_dense) + " (> 1.7)" + (counts ? "" : "; measured pair counts disagree with the model");
    return a_sparse <= 1.1 && std::abs(a_dense - 2.0) <= 0.01 && m_sparse < 1.3 && m_dense > 1.7 && counts;
  });
}

CheckResult check_gradients(const CheckOptions& o) {
  return timed(6, "gradient-check", 300.0, [&](std::string& detail) {
    const ToyModelConfig c = ToyModelConfig::tiny();
    Model<double> m(c);
    m.initialize(o.seed, InitStyle::dense);
    RngStream rng = RngStream(o.seed).split("gradcheck");
    const std::size_t P = 2, T = 2;
    FlowExample<double> ex;
    const SequenceInputs<double> in = random_inputs<double>(c, P, T, VertexAssignment{{2, 0}}, rng.split("inputs"));
    ex.z0 = in.latents;
    ex.actions = in.actions;
    ex.sigmas = in.sigmas;
    ex.assignment = in.assignment;
    ex.eps = Tensor64(ex.z0.shape());
    RngStream re = rng.split("eps");
    for (auto& v : ex.eps.data()) v = re.normal();
    const std::vector<FlowExample<double>> batch{ex};
    ModelParams<double> grads;
    flow_matching_loss<double>(m, batch, &grads);

    std::vector<std::pair<std::string, Tensor64*>> ps;
    std::vector<Tensor64*> gs;
    m.params().visit([&](const std::string& name, Tensor64& t) { ps.emplace_back(name, &t); });
    grads.visit([&](const std::string&, Tensor64& t) { gs.push_back(&t); });
    if (ps.size() != gs.size()) throw std::logic_error("gradient groups do not line up");
    double worst = 0.0;
    std::string worst_name;
    const double h = 1e-5;
    for (std::size_t g = 0; g < ps.size(); ++g) {
      Tensor64& p = *ps[g].second;
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double x0 = p[i];
        p[i] = x0 + h;
        const double lp = flow_matching_loss<double>(m, batch);
        p[i] = x0 - h;
        const double lm = flow_matching_loss<double>(m, batch);
        p[i] = x0;
        const double fd = (lp - lm) / (2 * h), an = (*gs[g])[i];
        const double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6});
        if (rel > worst) {
          worst = rel;
          worst_name = ps[g].first;
        }
      }
    }
    detail = std::to_string(ps.size()) + " parameter groups, " + std::to_string(m.params().count()) +
             " scalars, worst relative error " + fmt(worst) + " in " + worst_name + " (limit 1e-3)";
    return worst <= 1e-3;
  });
}

namespace {

template <typename T>
bool probe_suite(const Model<T>& m, const SequenceInputs<T>& in, const std::vector<std::vector<std::size_t>>& perms,
                 std::size_t& probes, std::string& failure) {
  for (AttentionMode mode : {AttentionMode::causal_hub, AttentionMode::causal_dense}) {
    const ProbeReport c = causality_probe(m, in, mode);
    probes += c.probes;
    if (!c.passed) {
      failure = std::string(to_string(mode)) + " causality: " + c.detail;
      return false;
    }
  }
  for (AttentionMode mode : {AttentionMode::causal_hub, AttentionMode::causal_dense, AttentionMode::bidirectional}) {
    for (const auto& perm : perms) {
      const ProbeReport e = equivariance_probe(m, in, perm, mode);
      probes += e.probes;
      if (!e.passed) {
        failure = std::string(to_string(mode)) + " equivariance: " + e.detail;
        return false;
      }
    }
  }
  return true;
}

std::vector<std::vector<std::size_t>> all_permutations(std::size_t P) {
  std::vector<std::size_t> p(P);
  std::iota(p.begin(), p.end(), 0);
  std::vector<std::vector<std::size_t>> out;
  while (std::next_permutation(p.begin(), p.end())) out.push_back(p);
  return out;
}

}  // namespace

CheckResult check_causality_equivariance(const CheckOptions& o) {
  return timed(7, "causality-equivariance", 60.0, [&](std::string& detail) {
    const ToyModelConfig c = ToyModelConfig::tiny();
    const std::size_t P = 3, T = 4;
    RngStream rng = RngStream(o.seed).split("probes");
    RngStream ra = rng.split("assignment");
    const VertexAssignment a = sample_assignment(P, c.pool_size, ra);
    std::size_t probes = 0;
    std::string failure;
    Model<float> mf(c);
    mf.initialize(o.seed, InitStyle::dense);
    const Model<double> md = convert_model<double>(mf);
    const auto perms = all_permutations(P);
    const bool ok = probe_suite(mf, random_inputs<float>(c, P, T, a, rng.split("inputs")), perms, probes, failure) &&
                    probe_suite(md, random_inputs<double>(c, P, T, a, rng.split("inputs")), perms, probes, failure);
    detail = ok ? std::to_string(probes) + " probes bit-exact in 32- and 64-bit (P=3, T=4, all agent permutations)"
                : failure;
    return ok;
  });
}

CheckResult check_streaming_equivalence(const CheckOptions& o) {
  return timed(8, "streaming-equivalence", 300.0, [&](std::string& detail) {
    const ToyModelConfig c;
    Model<float> m(c);
    m.initialize(o.seed);
    const std::size_t P = 3, T = 24;
    RngStream rng = RngStream(o.seed).split("streaming");
    const SyntheticWorld world(c, {});
    RngStream rs = rng.split("world");
    const WorldSample s = world.sample(rs, P, T);
    Tensor first({P, c.block_frames, c.height, c.width, c.latent_channels});
    const std::size_t inner = first.size() / (P * c.block_frames);
    for (std::size_t p = 0; p < P; ++p) {
      std::copy_n(s.latents.data().begin() + p * T * inner, c.block_frames * inner,
                  first.data().begin() + p * c.block_frames * inner);
    }
    RngStream ra = rng.split("assignment");
    const VertexAssignment a = sample_assignment(P, c.pool_size, ra);
    const StreamingReport r = streaming_probe(m, first, s.actions, a, T, 1e-4, o.seed);
    detail = r.probe.detail;
    return r.probe.passed;
  });
}

namespace {

Tensor first_block_of(const Tensor& latents, std::size_t n) {
  const std::size_t P = latents.extent(0), T = latents.extent(1);
  const std::size_t inner = latents.size() / (P * T);
  Tensor first({P, n, latents.extent(2), latents.extent(3), latents.extent(4)});
  for (std::size_t p = 0; p < P; ++p) {
    std::copy_n(latents.data().begin() + p * T * inner, n * inner, first.data().begin() + p * n * inner);
  }
  return first;
}

// Mean |a - b| over one agent's frames [f0, T).
template <typename A, typename B>
double agent_mean_abs(const BasicTensor<A>& a, const BasicTensor<B>& b, std::size_t p, std::size_t f0) {
  const std::size_t T = a.extent(1), inner = a.size() / (a.extent(0) * T);
  double s = 0.0;
  for (std::size_t i = (p * T + f0) * inner; i < (p + 1) * T * inner; ++i) {
    s += std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i]));
  }
  return s / static_cast<double>((T - f0) * inner);
}

}  // namespace

CheckResult check_toy_training(const CheckOptions& o, std::shared_ptr<Model<float>>* trained) {
  return timed(9, "toy-training", 900.0, [&](std::string& detail) {
    const ToyModelConfig c;
    auto model = std::make_shared<Model<float>>(c);
    model->initialize(o.seed);
    const TrainRecord rec = train_toy(*model, o.train);
    const double drop = 1.0 - rec.final_eval() / rec.initial_eval();
    if (trained) *trained = model;

    // Agent 0's actions change from block 1 on; compare agent 1's generated
    // frames against the float-vs-double gap of the unperturbed rollout.
    const std::size_t P = 2, T = o.perturb_rollout_frames, n = c.block_frames;
    const SyntheticWorld world(c, o.train.world);
    RngStream rng = RngStream(o.seed).split("perturb");
    RngStream rs = rng.split("world");
    const WorldSample s = world.sample(rs, P, T);
    const Tensor first = first_block_of(s.latents, n);
    Tensor alt = s.actions;
    RngStream rp = rng.split("actions");
    const Tensor fresh = world.random_actions(rp, P, T);
    const std::size_t F = c.action_fields();
    for (std::size_t t = n; t < T; ++t) {
      for (std::size_t f = 0; f < F; ++f) alt.at({0, t, f}) = fresh.at({0, t, f});
    }
    const VertexAssignment a = identity_assignment(P);
    RolloutOptions opts;
    opts.frames = T;
    const RngStream noise = rng.split("noise");
    const auto base = rollout<float>(*model, first, s.actions, a, DenoiseSchedule{}, noise, opts);
    const auto again = rollout<float>(*model, first, s.actions, a, DenoiseSchedule{}, noise, opts);
    const auto pert = rollout<float>(*model, first, alt, a, DenoiseSchedule{}, noise, opts);
    const Model<double> md = convert_model<double>(*model);
    const auto ref = rollout<double>(md, first.cast<double>(), s.actions.cast<double>(), a,
                                     DenoiseSchedule{}, noise, opts);
    const double change = agent_mean_abs(pert.latents, base.latents, 1, n);
    const double rerun = agent_mean_abs(again.latents, base.latents, 1, n);
    const double floor = std::max(rerun, agent_mean_abs(ref.latents, base.latents, 1, n));
    const double ratio = floor > 0 ? change / floor : (change > 0 ? INFINITY : 0.0);
    detail = "eval loss " + fmt(rec.initial_eval()) + " -> " + fmt(rec.final_eval()) + " (drop " +
             fmt(100 * drop) + "%, need >= 30%); agent 2 mean |change| " + fmt(change) +
             " vs noise floor " + fmt(floor) + " (x" + fmt(ratio) + ", need >= 10)";
    return drop >= 0.30 && ratio >= 10.0;
  });
}

CheckResult check_zero_shot_agents(const CheckOptions& o, std::shared_ptr<Model<float>> trained) {
  return timed(10, "zero-shot-agents", 300.0, [&](std::string& detail) {
    const ToyModelConfig c;
    if (!trained) {
      trained = std::make_shared<Model<float>>(c);
      trained->initialize(o.seed);
      train_toy(*trained, o.train);
    }
    const Model<float>& m = *trained;
    if (o.train.agents != 2 || m.config().pool_size != 4) {
      detail = "expects a model trained with P=2 from a V=4 pool";
      return false;
    }
    const std::size_t P = 4, T = 24;
    RngStream rng = RngStream(o.seed).split("zero-shot");
    RngStream ra = rng.split("assignment");
    const VertexAssignment a = sample_assignment(P, m.config().pool_size, ra);
    const SyntheticWorld world(m.config(), o.train.world);
    RngStream rs = rng.split("world");
    const WorldSample s = world.sample(rs, P, T);
    const StreamingReport sr = streaming_probe(m, first_block_of(s.latents, m.config().block_frames),
                                               s.actions, a, T, 1e-4, o.seed);
    if (!sr.probe.passed) {
      detail = "streaming: " + sr.probe.detail;
      return false;
    }
    std::vector<std::vector<std::size_t>> perms{{3, 2, 1, 0}, {1, 2, 3, 0}};
    RngStream rp = rng.split("perms");
    for (int i = 0; i < 3; ++i) perms.push_back(random_permutation(P, rp));
    std::size_t probes = 0;
    std::string failure;
    const SequenceInputs<float> in = random_inputs<float>(m.config(), P, 6, a, rng.split("inputs"));
    if (!probe_suite(m, in, perms, probes, failure)) {
      detail = failure;
      return false;
    }
    detail = "P=4 rollout: " + sr.probe.detail + "; " + std::to_string(probes) +
             " causality/equivariance probes bit-exact";
    return true;
  });
}

std::vector<CheckResult> run_checks(const CheckOptions& o, const std::vector<int>& ids,
                                    const std::function<void(const CheckResult&)>& on_result) {
  std::vector<int> todo = ids;
  if (todo.empty()) todo = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  std::shared_ptr<Model<float>> trained;
  std::vector<CheckResult> out;
  for (int id : todo) {
    CheckResult r;
    switch (id) {
      case 1: r = check_simplex_geometry(o); break;
      case 2: r = check_complex_equidistance(o); break;
      case 3: r = check_sparse_dense_oracle(o); break;
      case 4: r = check_mask_correctness(o); break;
      case 5: r = check_scaling(o); break;
      case 6: r = check_gradients(o); break;
      case 7: r = check_causality_equivariance(o); break;
      case 8: r = check_streaming_equivalence(o); break;
      case 9: r = check_toy_training(o, &trained); break;
      case 10: r = check_zero_shot_agents(o, trained); break;
      default: throw std::invalid_argument("unknown check id " + std::to_string(id));
    }
    out.push_back(r);
    if (on_result) on_result(r);
  }
  return out;
}

#define HUBSIM_CHECKS(T)                                                                          \
  template ProbeReport causality_probe(const Model<T>&, const SequenceInputs<T>&, AttentionMode); \
  template ProbeReport equivariance_probe(const Model<T>&, const SequenceInputs<T>&,             \
                                          const std::vector<std::size_t>&, AttentionMode);      \
  template StreamingReport streaming_probe(const Model<T>&, const BasicTensor<T>&,               \
                                           const BasicTensor<T>&, const VertexAssignment&,       \
                                           std::size_t, double, std::uint64_t);
HUBSIM_CHECKS(float)
HUBSIM_CHECKS(double)
#undef HUBSIM_CHECKS

template Model<double> convert_model<double, float>(const Model<float>&);
template Model<float> convert_model<float, double>(const Model<double>&);
template Model<float> convert_model<float, float>(const Model<float>&);

}  // namespace hubsim
