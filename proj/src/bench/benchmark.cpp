#include "hubsim/benchmark.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <set>
#include <sstream>
#include <stdexcept>

#include "hubsim/kernels.hpp"

namespace hubsim {

ToyModelConfig BenchConfig::default_model() {
  ToyModelConfig c;
  c.model_dim = 64;
  c.layers = 2;
  c.heads = 2;
  c.head_dim = 32;
  c.rope = {8, 16, 4, 4};
  c.pool_size = 8;
  c.hub_tokens = 4;
  c.height = 4;
  c.width = 4;
  c.block_frames = 3;
  c.window = 24;
  return c;
}

void BenchConfig::validate() const {
  model.validate();
  schedule.validate();
  if (agents.empty() || modes.empty()) throw std::invalid_argument("bench: nothing to run");
  if (reps < 1) throw std::invalid_argument("bench: reps must be >= 1");
  if (threads < 1) throw std::invalid_argument("bench: threads must be >= 1");
  for (std::size_t P : agents) {
    if (P < 1) throw std::invalid_argument("bench: agent counts must be >= 1");
    if (model.rope.p > 0 && P > model.pool_size) {
      throw std::invalid_argument("bench: P=" + std::to_string(P) + " exceeds the pool size " +
                                  std::to_string(model.pool_size));
    }
  }
  if (frames % model.block_frames != 0) {
    throw std::invalid_argument("bench: frames must be a multiple of the block size");
  }
}

namespace {

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(' ');
    const auto e = item.find_last_not_of(' ');
    if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

std::size_t parse_size(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  unsigned long long out = 0;
  try {
    out = std::stoull(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != v.size() || v[0] == '-') {
    throw std::invalid_argument("config: " + key + " expects a non-negative integer, got '" + v + "'");
  }
  return static_cast<std::size_t>(out);
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

}  // namespace

void apply_bench_keys(BenchConfig& c, const KeyValues& kv, std::vector<std::string>& used) {
  for (const auto& [key, value] : kv) {
    if (key.rfind("bench.", 0) != 0) continue;
    if (key == "bench.agents") {
      c.agents.clear();
      for (const auto& s : split_list(value)) c.agents.push_back(parse_size(key, s));
    } else if (key == "bench.modes") {
      c.modes.clear();
      for (const auto& s : split_list(value)) c.modes.push_back(cost_mode_from_string(s));
    } else if (key == "bench.frames") {
      c.frames = parse_size(key, value);
    } else if (key == "bench.reps") {
      c.reps = parse_size(key, value);
    } else if (key == "bench.warmup") {
      c.warmup = parse_size(key, value);
    } else if (key == "bench.threads") {
      c.threads = static_cast<int>(parse_size(key, value));
    } else if (key == "bench.seed") {
      c.seed = parse_size(key, value);
    } else if (key == "bench.memory_budget_tokens") {
      c.memory_budget_tokens = parse_size(key, value);
    } else if (key == "bench.schedule") {
      c.schedule = DenoiseSchedule::parse(value, c.schedule.shift);
    } else {
      continue;
    }
    used.push_back(key);
  }
  apply_model_keys(c.model, kv, used);
}

std::string BenchRecord::csv_header() {
  return "mode,P,T,L,K,n,window,threads,analytic_pairs,analytic_flops,expected_pairs,"
         "measured_pairs,median_step_ns,median_attention_ns,reps,status";
}

std::string BenchRecord::csv_row() const {
  std::ostringstream os;
  os.precision(10);
  os << to_string(mode) << ',' << P << ',' << T << ',' << L << ',' << K << ',' << n << ','
     << window << ',' << threads << ',' << analytic_pairs << ',' << analytic_flops << ','
     << expected_pairs << ',' << measured_pairs << ',';
  if (skipped) {
    os << ",," << reps << ",skipped";
    if (!note.empty()) os << ": " << note;
  } else {
    os << median_step_ns << ',' << median_attention_ns << ',' << reps << ','
       << (counts_match() ? "ok" : "count-mismatch");
  }
  return os.str();
}

std::uint64_t rollout_pair_count(const TopologySpec& spec, CostMode mode, std::size_t steps) {
  std::uint64_t total = visible_pair_count(spec, mode, 0);
  for (std::size_t b = 1; b < spec.blocks(); ++b) {
    total += visible_pair_count(spec, mode, b) * (steps + 1);
  }
  return total;
}

std::vector<BenchRecord> run_benchmark(const BenchConfig& config,
                                       const std::function<void(const BenchRecord&)>& on_record) {
  config.validate();
  const int previous_threads = max_threads();
  set_threads(config.threads);
  std::vector<BenchRecord> out;
  try {
    for (CostMode mode : config.modes) {
      const AttentionMode amode =
          mode == CostMode::dense ? AttentionMode::causal_dense : AttentionMode::causal_hub;
      for (std::size_t P : config.agents) {
        const ToyModelConfig& mc = config.model;
        const TopologySpec spec = mc.topology(P, config.frames, amode);
        const CostReport cost = attention_cost(spec, mode, mc.heads, mc.head_dim);
        BenchRecord r;
        r.mode = mode;
        r.P = P;
        r.T = spec.T;
        r.L = spec.L();
        r.K = spec.K;
        r.n = spec.n;
        r.window = spec.window ? *spec.window : spec.T;
        r.threads = config.threads;
        r.analytic_pairs = cost.pairs;
        r.analytic_flops = cost.flops;
        r.expected_pairs = rollout_pair_count(spec, mode, config.schedule.timesteps.size()) *
                           mc.layers * mc.heads;
        r.reps = config.reps;
        if (mode == CostMode::dense && spec.sequence_length() > config.memory_budget_tokens) {
          r.skipped = true;
          r.note = std::to_string(spec.sequence_length()) + " tokens over budget " +
                   std::to_string(config.memory_budget_tokens);
          out.push_back(r);
          if (on_record) on_record(r);
          continue;
        }

        Model<float> model(mc);
        model.initialize(config.seed);
        model.set_exec(config.threads > 1 ? Exec::parallel : Exec::serial);
        RngStream rng = RngStream(config.seed).split("bench").split(P);
        Tensor first({P, spec.n, spec.H, spec.W, mc.latent_channels});
        for (auto& v : first.data()) v = static_cast<float>(rng.normal());
        Tensor actions({P, spec.T, mc.action_fields()}, 0.0f);
        const ActionLayout al = action_layout(mc.action_kind);
        for (std::size_t i = 0; i < actions.size(); ++i) {
          const std::size_t f = i % al.fields();
          actions[i] = f < al.discrete ? (rng.uniform() < 0.15 ? 1.0f : 0.0f)
                                       : static_cast<float>(rng.normal());
        }
        const VertexAssignment assignment = identity_assignment(P);
        RolloutOptions opts;
        opts.frames = config.frames;
        opts.mode = amode;

        std::vector<double> step_ns, attn_ns;
        for (std::size_t rep = 0; rep < config.warmup + config.reps; ++rep) {
          const auto start = std::chrono::steady_clock::now();
          const RolloutResult<float> res =
              rollout<float>(model, first, actions, assignment, config.schedule, rng.split(rep), opts);
          const double ns =
              std::chrono::duration<double, std::nano>(std::chrono::steady_clock::now() - start).count();
          if (rep < config.warmup) continue;
          r.measured_pairs = res.counters.pairs;
          step_ns.push_back(ns / static_cast<double>(std::max<std::size_t>(spec.blocks() - 1, 1)));
          attn_ns.push_back(static_cast<double>(res.counters.nanoseconds));
        }
        r.median_step_ns = median(step_ns);
        r.median_attention_ns = median(attn_ns);
        out.push_back(r);
        if (on_record) on_record(r);
      }
    }
  } catch (...) {
    set_threads(previous_threads);
    throw;
  }
  set_threads(previous_threads);
  return out;
}

double fit_loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("fit: need >= 2 points");
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0) || !(y[i] > 0)) throw std::invalid_argument("fit: values must be positive");
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= static_cast<double>(x.size());
  my /= static_cast<double>(x.size());
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = std::log(x[i]) - mx;
    sxy += dx * (std::log(y[i]) - my);
    sxx += dx * dx;
  }
  if (sxx == 0) throw std::invalid_argument("fit: x values are all equal");
  return sxy / sxx;
}

double fit_scaling_exponent(const std::vector<BenchRecord>& records, CostMode mode,
                            const std::function<double(const BenchRecord&)>& metric) {
  std::vector<double> x, y;
  std::set<std::size_t> distinct;
  for (const auto& r : records) {
    if (r.mode != mode || r.skipped) continue;
    x.push_back(static_cast<double>(r.P));
    y.push_back(metric(r));
    distinct.insert(r.P);
  }
  if (distinct.size() < 3) {
    throw std::invalid_argument(std::string("fit: ") + to_string(mode) + " has " +
                                std::to_string(distinct.size()) +
                                " distinct agent counts, need >= 3");
  }
  return fit_loglog_slope(x, y);
}

std::size_t cost_crossover(const TopologySpec& base, std::size_t max_P) {
  std::size_t crossover = 0;
  for (std::size_t P = 1; P <= max_P; ++P) {
    TopologySpec s = base;
    s.P = P;
    const bool below = attention_cost(s, CostMode::sparse_hub).flops <
                       attention_cost(s, CostMode::dense).flops;
    if (below && crossover == 0) crossover = P;
    if (!below) crossover = 0;
  }
  return crossover;
}

std::string long_format(const std::vector<BenchRecord>& records) {
  std::ostringstream os;
  os.precision(10);
  os << "mode,P,metric,value\n";
  for (const auto& r : records) {
    const char* m = to_string(r.mode);
    os << m << ',' << r.P << ",analytic_pairs," << r.analytic_pairs << '\n';
    os << m << ',' << r.P << ",analytic_flops," << r.analytic_flops << '\n';
    if (r.skipped) continue;
    os << m << ',' << r.P << ",measured_pairs," << r.measured_pairs << '\n';
    os << m << ',' << r.P << ",median_step_ns," << r.median_step_ns << '\n';
    os << m << ',' << r.P << ",median_attention_ns," << r.median_attention_ns << '\n';
  }
  return os.str();
}

}  // namespace hubsim
