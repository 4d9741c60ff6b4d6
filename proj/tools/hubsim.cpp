#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "hubsim/benchmark.hpp"
#include "hubsim/checkpoint.hpp"
#include "hubsim/checks.hpp"
#include "hubsim/config_io.hpp"
#include "hubsim/kernels.hpp"
#include "hubsim/streaming.hpp"
#include "hubsim/tensor_io.hpp"
#include "hubsim/topology.hpp"
#include "hubsim/training.hpp"

using namespace hubsim;

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) out.push_back(item);
  return out;
}

// Writes to `path`, or stdout for "" and "-".
void emit(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
}

KeyValues load_config(const std::string& path) {
  return path.empty() ? KeyValues{} : read_key_values(path);
}

// ---------------------------------------------------------------------------

struct BenchArgs {
  std::string config, out = "-", long_out;
  std::optional<int> threads;
};

int run_bench(const BenchArgs& a) {
  BenchConfig c;
  const KeyValues kv = load_config(a.config);
  std::vector<std::string> used;
  apply_bench_keys(c, kv, used);
  reject_unknown_keys(kv, used);
  if (a.threads) c.threads = *a.threads;

  std::ostringstream csv;
  csv << BenchRecord::csv_header() << '\n';
  const auto records = run_benchmark(c, [](const BenchRecord& r) {
    std::cerr << "  " << r.csv_row() << '\n';
  });
  bool counts = true;
  for (const auto& r : records) {
    csv << r.csv_row() << '\n';
    counts = counts && r.counts_match();
  }
  emit(a.out, csv.str());
  if (!a.long_out.empty()) emit(a.long_out, long_format(records));

  const auto attn = [](const BenchRecord& r) { return r.median_attention_ns; };
  for (CostMode m : c.modes) {
    try {
      std::cerr << to_string(m) << " attention-time exponent "
                << fit_scaling_exponent(records, m, attn) << '\n';
    } catch (const std::invalid_argument& e) {
      std::cerr << e.what() << '\n';
    }
  }
  if (!counts) {
    std::cerr << "measured pair counts disagree with the closed form\n";
    return 1;
  }
  return 0;
}

// Rebuilds records from a bench CSV for the long table.
int run_long_format(const std::string& in_path, const std::string& out) {
  std::ifstream in(in_path);
  if (!in) throw std::runtime_error("cannot open " + in_path);
  std::string line;
  std::getline(in, line);
  const auto header = split(line, ',');
  std::vector<BenchRecord> records;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split(line, ',');
    std::map<std::string, std::string> row;
    for (std::size_t i = 0; i < header.size() && i < cells.size(); ++i) row[header[i]] = cells[i];
    BenchRecord r;
    r.mode = cost_mode_from_string(row.at("mode"));
    r.P = std::stoul(row.at("P"));
    r.analytic_pairs = std::stoull(row.at("analytic_pairs"));
    r.analytic_flops = std::stod(row.at("analytic_flops"));
    r.skipped = row["status"].rfind("skipped", 0) == 0;
    if (!r.skipped) {
      r.measured_pairs = std::stoull(row.at("measured_pairs"));
      r.median_step_ns = std::stod(row.at("median_step_ns"));
      r.median_attention_ns = std::stod(row.at("median_attention_ns"));
    }
    records.push_back(r);
  }
  emit(out, long_format(records));
  return 0;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string config, checkpoint, metrics;
  std::optional<std::size_t> steps;
  std::optional<double> lr;
  std::optional<std::uint64_t> seed;
};

int run_train(const TrainArgs& a) {
  ToyModelConfig mc;
  TrainConfig tc = CheckOptions::default_train();
  const KeyValues kv = load_config(a.config);
  std::vector<std::string> used;
  apply_model_keys(mc, kv, used);
  apply_train_keys(tc, kv, used);
  reject_unknown_keys(kv, used);
  if (a.steps) tc.steps = *a.steps;
  if (a.lr) tc.lr = *a.lr;
  if (a.seed) tc.seed = *a.seed;

  Model<float> model(mc);
  model.initialize(tc.seed);
  const std::size_t every = std::max<std::size_t>(tc.steps / 20, 1);
  const TrainRecord rec = train_toy(model, tc, [&](std::size_t step, double loss) {
    if (step % every == 0) std::cerr << "step " << step << " loss " << loss << '\n';
  });
  std::cerr << "eval loss " << rec.initial_eval() << " -> " << rec.final_eval() << '\n';
  if (!a.metrics.empty()) emit(a.metrics, rec.metrics_csv());
  if (!a.checkpoint.empty()) {
    save_checkpoint(a.checkpoint, model, {tc.seed, tc.steps});
    std::cerr << "checkpoint written to " << a.checkpoint << '\n';
  }
  return 0;
}

// ---------------------------------------------------------------------------

struct RolloutArgs {
  std::string checkpoint, actions, first, out, schedule = "1000,750,500,250", mode = "causal-hub";
  std::uint64_t seed = 1;
  std::size_t P = 2, T = 24;
  std::optional<std::size_t> window;
  std::string vertices;
  double sigma_ctx = 0.0;
};

// CSV rows agent,frame,field_0..field_{F-1}; every (agent, frame < T) once.
Tensor read_action_csv(const std::string& path, std::size_t P, std::size_t T, ActionKind kind) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open action file " + path);
  const std::size_t F = action_layout(kind).fields();
  Tensor actions({P, T, F}, 0.0f);
  std::vector<bool> seen(P * T, false);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line.rfind("agent", 0) == 0) continue;
    const auto cells = split(line, ',');
    const std::string where = path + ":" + std::to_string(lineno);
    if (cells.size() != F + 2) {
      throw std::invalid_argument(where + ": expected " + std::to_string(F + 2) + " columns, got " +
                                  std::to_string(cells.size()));
    }
    const std::size_t p = std::stoul(cells[0]), t = std::stoul(cells[1]);
    if (p >= P || t >= T) continue;
    if (seen[p * T + t]) throw std::invalid_argument(where + ": duplicate row");
    seen[p * T + t] = true;
    ActionFrame frame{kind, {}};
    for (std::size_t f = 0; f < F; ++f) frame.fields.push_back(std::stof(cells[f + 2]));
    frame.validate();
    for (std::size_t f = 0; f < F; ++f) actions.at({p, t, f}) = frame.fields[f];
  }
  for (std::size_t i = 0; i < seen.size(); ++i) {
    if (!seen[i]) {
      throw std::invalid_argument(path + ": no row for agent " + std::to_string(i / T) + ", frame " +
                                  std::to_string(i % T));
    }
  }
  return actions;
}

AttentionMode parse_mode(const std::string& s) {
  if (s == "causal-hub") return AttentionMode::causal_hub;
  if (s == "causal-dense") return AttentionMode::causal_dense;
  throw std::invalid_argument("rollout mode must be causal-hub or causal-dense, got '" + s + "'");
}

int run_rollout(const RolloutArgs& a) {
  const Model<float> model = load_checkpoint(a.checkpoint);
  const ToyModelConfig& mc = model.config();
  const RngStream rng(a.seed);

  VertexAssignment assignment;
  if (!a.vertices.empty()) {
    for (const auto& v : split(a.vertices, ',')) assignment.vertex.push_back(std::stoul(v));
    if (assignment.agents() != a.P) throw std::invalid_argument("--vertices needs one entry per agent");
    validate_assignment(assignment, mc.pool_size);
  } else {
    RngStream ra = rng.split("assignment");
    assignment = mc.rope.p > 0 ? sample_assignment(a.P, mc.pool_size, ra) : identity_assignment(a.P);
  }

  Tensor actions;
  if (!a.actions.empty()) {
    actions = read_action_csv(a.actions, a.P, a.T, mc.action_kind);
  } else {
    RngStream r = rng.split("actions");
    actions = SyntheticWorld(mc, {}).random_actions(r, a.P, a.T);
  }
  Tensor first;
  if (!a.first.empty()) {
    first = read_tensor<float>(a.first);
  } else {
    // first block of a synthetic world sample
    RngStream r = rng.split("world");
    const WorldSample s = SyntheticWorld(mc, {}).sample(r, a.P, mc.block_frames);
    first = s.latents;
  }

  RolloutOptions o;
  o.frames = a.T;
  o.window = a.window;
  o.mode = parse_mode(a.mode);
  o.sigma_ctx = a.sigma_ctx;
  const RolloutResult<float> res =
      rollout<float>(model, first, actions, assignment, DenoiseSchedule::parse(a.schedule),
                     rng.split("rollout"), o);
  std::cerr << "vertices";
  for (std::size_t v : assignment.vertex) std::cerr << ' ' << v;
  std::cerr << "\n" << res.forwards << " cached forwards, peak " << res.peak_cached_tokens
            << " cached tokens per layer, " << res.counters.pairs << " attention pairs\n";
  if (!a.out.empty()) write_tensor(a.out, res.latents);
  return 0;
}

// ---------------------------------------------------------------------------

struct MaskArgs {
  std::size_t P = 2, T = 3, H = 1, W = 1, K = 1, n = 1;
  std::optional<std::size_t> window;
  std::string kind = "causal-hub", text, binary;
  std::size_t V = 0, d_half = 0;
  double alpha = 1.0;
  std::string embedding = "auto", pool_out;
};

int run_masks(const MaskArgs& a) {
  if (a.V > 0) {
    const std::size_t d = a.d_half > 0 ? a.d_half : a.V;
    SimplexEmbedding e = SimplexEmbedding::automatic;
    if (a.embedding == "helmert") e = SimplexEmbedding::helmert;
    else if (a.embedding == "centered") e = SimplexEmbedding::centered_one_hot;
    else if (a.embedding != "auto") throw std::invalid_argument("unknown embedding " + a.embedding);
    const SimplexPool pool = build_simplex_pool(a.V, d, a.alpha, e);
    if (!a.pool_out.empty()) write_tensor(a.pool_out, pool.vertices);
    else write_tensor(std::cout, pool.vertices);
    return 0;
  }

  TopologySpec s;
  s.P = a.P;
  s.T = a.T;
  s.H = a.H;
  s.W = a.W;
  s.K = a.K;
  s.n = a.n;
  s.window = a.window;
  MaskMatrix m;
  if (a.kind == "hub") {
    m = hub_mask(s);
  } else if (a.kind == "causal-hub") {
    m = causal_hub_mask(s);
    if (s.window) m = compose_masks({m, local_window_mask(s)}, &s);
  } else if (a.kind == "block-causal") {
    m = block_causal_mask(s);
  } else if (a.kind == "window") {
    m = local_window_mask(s);
  } else {
    throw std::invalid_argument("unknown mask kind '" + a.kind + "'");
  }
  if (!a.binary.empty()) write_tensor(a.binary, mask_to_tensor(m));
  if (!a.text.empty() || a.binary.empty()) emit(a.text, mask_to_text(m));
  return 0;
}

// ---------------------------------------------------------------------------

int run_verify(const std::vector<int>& ids, std::uint64_t seed) {
  CheckOptions o;
  o.seed = seed;
  bool ok = true;
  std::size_t passed = 0, total = 0;
  run_checks(o, ids, [&](const CheckResult& r) {
    std::cout << r.line() << std::endl;
    ok = ok && r.passed;
    passed += r.passed;
    ++total;
  });
  std::cout << passed << "/" << total << " checks passed\n";
  return ok ? 0 : 1;
}

struct CostArgs {
  std::vector<std::size_t> agents{2, 4, 8};
  std::size_t T = 24, H = 2, W = 2, K = 2, n = 3, heads = 1, head_dim = 64;
  std::size_t crossover_max = 64;
};

int run_cost(const CostArgs& a) {
  std::cout << CostReport::csv_header() << '\n';
  TopologySpec s;
  s.T = a.T;
  s.H = a.H;
  s.W = a.W;
  s.n = a.n;
  for (CostMode mode : {CostMode::dense, CostMode::sparse_hub}) {
    for (std::size_t P : a.agents) {
      s.P = P;
      s.K = mode == CostMode::dense ? 0 : a.K;
      std::cout << attention_cost(s, mode, a.heads, a.head_dim).csv_row() << '\n';
    }
  }
  s.K = a.K;
  const std::size_t x = cost_crossover(s, a.crossover_max);
  std::cerr << "sparse-hub below dense from P = "
            << (x ? std::to_string(x) : "none up to " + std::to_string(a.crossover_max)) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-agent world-model toolkit"};
  app.require_subcommand(1);

  BenchArgs bench;
  auto* b = app.add_subcommand("bench", "Scaling study: timed cached rollouts, CSV out");
  b->add_option("--config", bench.config, "key=value file (bench.*, model.*)");
  b->add_option("-o,--out", bench.out, "CSV path, '-' for stdout");
  b->add_option("--long", bench.long_out, "also write the long-format table here");
  b->add_option("--threads", bench.threads, "threads for the timed kernels");

  std::string long_in, long_out = "-";
  auto* lf = app.add_subcommand("long-format", "Turn a bench CSV into a mode,P,metric,value table");
  lf->add_option("input", long_in, "bench CSV")->required();
  lf->add_option("-o,--out", long_out);

  TrainArgs train;
  auto* t = app.add_subcommand("train-toy", "Train on the synthetic shared world");
  t->add_option("--config", train.config, "key=value file (model.*, train.*, world.*)");
  t->add_option("--steps", train.steps);
  t->add_option("--lr", train.lr);
  t->add_option("--seed", train.seed);
  t->add_option("--checkpoint", train.checkpoint, "output directory");
  t->add_option("--metrics", train.metrics, "step,loss,eval_loss CSV");

  RolloutArgs roll;
  auto* r = app.add_subcommand("rollout", "Streamed rollout from a checkpoint");
  r->add_option("--checkpoint", roll.checkpoint)->required();
  r->add_option("--seed", roll.seed);
  r->add_option("-P,--agents", roll.P);
  r->add_option("-T,--frames", roll.T);
  r->add_option("--window", roll.window, "latent frames; default from the model");
  r->add_option("--schedule", roll.schedule, "decreasing timesteps, e.g. 1000,750,500,250");
  r->add_option("--actions", roll.actions, "CSV agent,frame,field_0..; random when absent");
  r->add_option("--first", roll.first, "tensor dump (P, n, H, W, C) of the first block");
  r->add_option("--vertices", roll.vertices, "comma separated vertex per agent");
  r->add_option("--mode", roll.mode, "causal-hub or causal-dense");
  r->add_option("--sigma-ctx", roll.sigma_ctx);
  r->add_option("-o,--out", roll.out, "latent dump path");

  MaskArgs mask;
  auto* m = app.add_subcommand("masks", "Dump a mask or a simplex pool");
  m->add_option("-P", mask.P);
  m->add_option("-T", mask.T);
  m->add_option("-H", mask.H);
  m->add_option("-W", mask.W);
  m->add_option("-K", mask.K);
  m->add_option("-n", mask.n);
  m->add_option("--window", mask.window);
  m->add_option("--kind", mask.kind, "hub, causal-hub, block-causal or window");
  m->add_option("--text", mask.text, "0/1 grid path ('-' for stdout)");
  m->add_option("--binary", mask.binary, "u8 tensor dump path");
  m->add_option("--pool", mask.V, "dump a V-vertex simplex pool instead");
  m->add_option("--d-half", mask.d_half);
  m->add_option("--alpha", mask.alpha);
  m->add_option("--embedding", mask.embedding, "auto, helmert or centered");
  m->add_option("--pool-out", mask.pool_out);

  std::vector<int> ids;
  std::uint64_t verify_seed = 1;
  auto* v = app.add_subcommand("verify", "Run the acceptance checks");
  v->add_option("ids", ids, "subset of 1..10");
  v->add_option("--seed", verify_seed);

  CostArgs cost;
  auto* c = app.add_subcommand("cost", "Analytic attention pair and FLOP counts");
  c->add_option("-P,--agents", cost.agents)->delimiter(',');
  c->add_option("-T", cost.T);
  c->add_option("-H", cost.H);
  c->add_option("-W", cost.W);
  c->add_option("-K", cost.K);
  c->add_option("-n", cost.n);
  c->add_option("--heads", cost.heads);
  c->add_option("--head-dim", cost.head_dim);
  c->add_option("--crossover-max", cost.crossover_max);

  CLI11_PARSE(app, argc, argv);
  try {
    if (*b) return run_bench(bench);
    if (*lf) return run_long_format(long_in, long_out);
    if (*t) return run_train(train);
    if (*r) return run_rollout(roll);
    if (*m) return run_masks(mask);
    if (*v) return run_verify(ids, verify_seed);
    if (*c) return run_cost(cost);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
