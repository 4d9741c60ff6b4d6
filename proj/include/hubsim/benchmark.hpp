#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "hubsim/attention.hpp"
#include "hubsim/config_io.hpp"
#include "hubsim/model.hpp"
#include "hubsim/streaming.hpp"

namespace hubsim {

struct BenchConfig {
  std::vector<std::size_t> agents{2, 4, 8};
  std::vector<CostMode> modes{CostMode::dense, CostMode::sparse_hub};
  std::size_t frames = 24;
  std::size_t reps = 3;
  std::size_t warmup = 1;
  int threads = 1;
  std::uint64_t seed = 1;
  // Dense runs whose full token sequence exceeds this are recorded as skipped.
  std::size_t memory_budget_tokens = 1u << 16;
  DenoiseSchedule schedule;
  ToyModelConfig model = default_model();

  // Two layers, D = 64, 4x4 latent grid, K = 4, V = 8 so P = 8 fits the pool.
  static ToyModelConfig default_model();
  void validate() const;
};

// "bench.*" keys (lists are comma separated), then "model.*" keys.
void apply_bench_keys(BenchConfig& c, const KeyValues& kv, std::vector<std::string>& used);

struct BenchRecord {
  CostMode mode = CostMode::sparse_hub;
  std::size_t P = 0, T = 0, L = 0, K = 0, n = 0, window = 0;
  int threads = 1;
  std::uint64_t analytic_pairs = 0;      // per block, attention_cost
  double analytic_flops = 0.0;           // attention_cost
  std::uint64_t expected_pairs = 0;      // whole rollout, from the closed form
  std::uint64_t measured_pairs = 0;      // kernel counters, one rollout
  double median_step_ns = 0.0;           // per generated block
  double median_attention_ns = 0.0;      // attention kernels, whole rollout
  std::size_t reps = 0;
  bool skipped = false;
  std::string note;

  bool counts_match() const { return skipped || expected_pairs == measured_pairs; }
  static std::string csv_header();
  std::string csv_row() const;
};

// Attention pairs a rollout's cached forwards evaluate, per head and layer,
// summed over blocks: block 0 once, later blocks once per denoise step plus
// the cache write.
std::uint64_t rollout_pair_count(const TopologySpec& spec, CostMode mode, std::size_t steps);

std::vector<BenchRecord> run_benchmark(
    const BenchConfig& config, const std::function<void(const BenchRecord&)>& on_record = {});

// Least-squares slope of log(metric) against log(P) over non-skipped records
// of the mode. Throws with fewer than three distinct P.
double fit_scaling_exponent(const std::vector<BenchRecord>& records, CostMode mode,
                            const std::function<double(const BenchRecord&)>& metric);
double fit_loglog_slope(const std::vector<double>& x, const std::vector<double>& y);

// Smallest P in [1, max_P] from which sparse-hub analytic FLOPs stay below
// dense; 0 when there is none.
std::size_t cost_crossover(const TopologySpec& base, std::size_t max_P);

// Long-format table: mode,P,metric,value.
std::string long_format(const std::vector<BenchRecord>& records);

}  // namespace hubsim
