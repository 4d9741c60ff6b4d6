#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "hubsim/benchmark.hpp"
#include "hubsim/model.hpp"
#include "hubsim/streaming.hpp"
#include "hubsim/training.hpp"

namespace hubsim {

struct CheckResult {
  int id = 0;
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
  double budget_seconds = 0.0;

  // "[PASS] 3 sparse-dense-oracle (0.41 s): ..."
  std::string line() const;
};

struct ProbeReport {
  bool passed = true;
  std::size_t probes = 0;
  std::string detail;

  void fail(const std::string& why);
};

// Perturbs every input of the blocks from k on, for each k, and then each
// agent latent of later blocks one at a time; outputs of earlier blocks must
// stay bit-identical and the perturbed block's own output must move.
template <typename T>
ProbeReport causality_probe(const Model<T>& model, const SequenceInputs<T>& in, AttentionMode mode);

// Relabels agents with `perm` (new agent i is old agent perm[i], keeping its
// vertex) and requires the output rows to follow bit-for-bit.
template <typename T>
ProbeReport equivariance_probe(const Model<T>& model, const SequenceInputs<T>& in,
                               const std::vector<std::size_t>& perm, AttentionMode mode);

struct StreamingReport {
  ProbeReport probe;
  double max_abs_diff = 0.0;
  std::size_t steps = 0;
  std::size_t peak_tokens = 0;
  std::size_t bound_tokens = 0;
  std::uint64_t foreign_reads = 0;
};

// Cached rollout against the monolithic causal forward at every denoise step.
template <typename T>
StreamingReport streaming_probe(const Model<T>& model, const BasicTensor<T>& first_block,
                                const BasicTensor<T>& actions, const VertexAssignment& assignment,
                                std::size_t frames, double tolerance, std::uint64_t seed = 9);

// Same parameters in another precision.
template <typename To, typename From>
Model<To> convert_model(const Model<From>& model);

struct CheckOptions {
  std::uint64_t seed = 1;
  std::size_t oracle_specs = 200;
  BenchConfig bench;
  TrainConfig train = default_train();
  // Length of the rollouts compared under the action perturbation.
  std::size_t perturb_rollout_frames = 12;

  // 500 steps at lr 1e-2; the library default lr is gentler.
  static TrainConfig default_train();
};

CheckResult check_simplex_geometry(const CheckOptions& o);
CheckResult check_complex_equidistance(const CheckOptions& o);
CheckResult check_sparse_dense_oracle(const CheckOptions& o);
CheckResult check_mask_correctness(const CheckOptions& o);
CheckResult check_scaling(const CheckOptions& o);
CheckResult check_gradients(const CheckOptions& o);
CheckResult check_causality_equivariance(const CheckOptions& o);
CheckResult check_streaming_equivalence(const CheckOptions& o);
// Leaves the trained model in *trained when given.
CheckResult check_toy_training(const CheckOptions& o,
                               std::shared_ptr<Model<float>>* trained = nullptr);
// Trains its own model when `trained` is null.
CheckResult check_zero_shot_agents(const CheckOptions& o,
                                   std::shared_ptr<Model<float>> trained = nullptr);

// ids empty: all ten, in order.
std::vector<CheckResult> run_checks(const CheckOptions& o, const std::vector<int>& ids = {},
                                    const std::function<void(const CheckResult&)>& on_result = {});

}  // namespace hubsim
