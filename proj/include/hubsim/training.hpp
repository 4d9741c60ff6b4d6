#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "hubsim/model.hpp"
#include "hubsim/rng.hpp"
#include "hubsim/world.hpp"

namespace hubsim {

// (1 - sigma) z0 + sigma eps, elementwise.
template <typename T>
BasicTensor<T> flow_interpolant(const BasicTensor<T>& z0, const BasicTensor<T>& eps, double sigma);

// Per-block version over (P, T, ...) latents: frames of block b use sigmas[b].
template <typename T>
BasicTensor<T> flow_interpolant_blocks(const BasicTensor<T>& z0, const BasicTensor<T>& eps,
                                       const std::vector<double>& sigmas, std::size_t block_frames);

// Independent U[0, 1) noise level per temporal block.
std::vector<double> diffusion_forcing_noise(RngStream& rng, std::size_t num_blocks);

// One training example with its noise fixed.
template <typename T>
struct FlowExample {
  BasicTensor<T> z0;   // P x T x H x W x Cz
  BasicTensor<T> eps;  // same shape
  BasicTensor<T> actions;
  std::vector<double> sigmas;  // per block
  VertexAssignment assignment;
};

// Mean over the batch of the per-example mean squared error between the
// predicted velocity and eps - z0. Per-agent partial sums are added in
// vertex order, so the value is invariant under joint agent permutation.
// With grads, parameter gradients are accumulated into it.
template <typename T>
double flow_matching_loss(const Model<T>& model, std::span<const FlowExample<T>> batch,
                          ModelParams<T>* grads = nullptr,
                          AttentionMode mode = AttentionMode::causal_hub);

// Draws assignment, noise levels and eps for a clean sample.
FlowExample<float> make_example(const WorldSample& sample, const ToyModelConfig& config,
                                RngStream& rng);

struct TrainConfig {
  std::size_t steps = 500;
  std::size_t batch = 4;
  std::size_t agents = 2;
  std::size_t frames = 6;
  double lr = 3e-4;
  double momentum = 0.9;
  std::uint64_t seed = 1;
  std::size_t eval_batch = 8;
  std::size_t eval_every = 50;  // 0: only at the start and the end
  WorldConfig world;

  void validate() const;
};

struct TrainRecord {
  std::vector<double> loss;  // training loss per step, before the update
  std::vector<std::pair<std::size_t, double>> eval;  // fixed held-out batch
  double initial_eval() const { return eval.front().second; }
  double final_eval() const { return eval.back().second; }
  // step,loss[,eval] rows
  std::string metrics_csv() const;
};

// Momentum SGD over flow_matching_loss with diffusion-forcing noise.
// Deterministic given the seed and the model's initial parameters.
TrainRecord train_toy(Model<float>& model, const TrainConfig& config,
                      const std::function<void(std::size_t, double)>& progress = {});

}  // namespace hubsim
