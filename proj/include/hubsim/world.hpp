#pragma once

#include <cstddef>
#include <cstdint>

#include "hubsim/model.hpp"
#include "hubsim/rng.hpp"
#include "hubsim/tensor.hpp"

namespace hubsim {

// Synthetic shared world. A global state moves under the sum of all agents'
// continuous actions; each agent has its own position moved by its own
// continuous actions. Agent p's latent at frame t is a fixed random linear
// rendering of (state_t, action_t^p, position_t^p) per spatial cell, so an
// action at frame t reaches other agents from frame t+1 on.
struct WorldConfig {
  std::size_t state_dim = 4;
  std::uint64_t world_seed = 7;
  double state_gain = 0.25;
  double move_gain = 0.2;
  double press_rate = 0.15;    // chance a binary control is held
  double action_scale = 1.0;   // std of continuous controls
};

struct WorldSample {
  Tensor latents;  // P x T x H x W x Cz
  Tensor actions;  // P x T x F
};

class SyntheticWorld {
 public:
  SyntheticWorld(const ToyModelConfig& model, WorldConfig config);

  const WorldConfig& config() const { return config_; }

  // Random actions and initial conditions, then render.
  WorldSample sample(RngStream& rng, std::size_t P, std::size_t T) const;

  // Deterministic rollout of given actions from an initial state (state_dim)
  // and initial positions (P x 2).
  Tensor render(const Tensor64& state0, const Tensor64& positions0, const Tensor& actions) const;

  // Actions drawn the way sample() draws them.
  Tensor random_actions(RngStream& rng, std::size_t P, std::size_t T) const;

 private:
  WorldConfig config_;
  ActionLayout layout_;
  std::size_t H_, W_, Cz_;
  Tensor64 state_mix_;  // state_dim x continuous
  Tensor64 move_mix_;   // 2 x continuous
  Tensor64 render_;     // (H*W) x Cz x (state_dim + F + 2)
};

}  // namespace hubsim
