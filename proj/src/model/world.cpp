#include "hubsim/world.hpp"

#include <cmath>
#include <stdexcept>

#include "hubsim/errors.hpp"

namespace hubsim {

SyntheticWorld::SyntheticWorld(const ToyModelConfig& model, WorldConfig config)
    : config_(config),
      layout_(action_layout(model.action_kind)),
      H_(model.height),
      W_(model.width),
      Cz_(model.latent_channels) {
  if (config_.state_dim < 1) throw std::invalid_argument("world: state_dim must be >= 1");
  if (!(config_.press_rate >= 0.0 && config_.press_rate <= 1.0)) {
    throw std::invalid_argument("world: press_rate must lie in [0, 1]");
  }
  const std::size_t S = config_.state_dim;
  const std::size_t nc = layout_.continuous;
  const std::size_t in = S + layout_.fields() + 2;
  RngStream rng = RngStream(config_.world_seed).split("world");
  state_mix_ = Tensor64({S, nc});
  move_mix_ = Tensor64({2, nc});
  render_ = Tensor64({H_ * W_, Cz_, in});
  const double sc = nc > 0 ? 1.0 / std::sqrt(static_cast<double>(nc)) : 0.0;
  RngStream a = rng.split("state");
  for (auto& v : state_mix_.data()) v = a.normal() * config_.state_gain * sc;
  RngStream b = rng.split("move");
  for (auto& v : move_mix_.data()) v = b.normal() * config_.move_gain * sc;
  RngStream c = rng.split("render");
  const double rs = 1.5 / std::sqrt(static_cast<double>(in));
  for (auto& v : render_.data()) v = c.normal() * rs;
}

Tensor SyntheticWorld::random_actions(RngStream& rng, std::size_t P, std::size_t T) const {
  const std::size_t F = layout_.fields();
  Tensor actions({P, T, F}, 0.0f);
  for (std::size_t p = 0; p < P; ++p) {
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t f = 0; f < F; ++f) {
        double v;
        if (f < layout_.discrete) {
          v = rng.uniform() < config_.press_rate ? 1.0 : 0.0;
        } else {
          v = rng.normal() * config_.action_scale;
        }
        actions.at({p, t, f}) = static_cast<float>(v);
      }
    }
  }
  return actions;
}

WorldSample SyntheticWorld::sample(RngStream& rng, std::size_t P, std::size_t T) const {
  Tensor64 state0({config_.state_dim});
  for (auto& v : state0.data()) v = rng.normal();
  Tensor64 pos0({P, 2});
  for (auto& v : pos0.data()) v = 0.5 * rng.normal();
  WorldSample s;
  s.actions = random_actions(rng, P, T);
  s.latents = render(state0, pos0, s.actions);
  return s;
}

Tensor SyntheticWorld::render(const Tensor64& state0, const Tensor64& positions0,
                              const Tensor& actions) const {
  const std::size_t S = config_.state_dim;
  const std::size_t F = layout_.fields();
  const std::size_t nc = layout_.continuous;
  if (actions.rank() != 3 || actions.extent(2) != F) {
    throw ShapeError("world: actions " + shape_to_string(actions.shape()) + " need " +
                     std::to_string(F) + " fields");
  }
  const std::size_t P = actions.extent(0);
  const std::size_t T = actions.extent(1);
  if (state0.shape() != Shape{S} || positions0.shape() != Shape{P, 2}) {
    throw ShapeError("world: initial state " + shape_to_string(state0.shape()) + " / positions " +
                     shape_to_string(positions0.shape()));
  }
  const std::size_t in = S + F + 2;
  Tensor out({P, T, H_, W_, Cz_}, 0.0f);
  std::vector<double> state(state0.data().begin(), state0.data().end());
  Tensor64 pos = positions0;
  std::vector<double> feat(in);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t p = 0; p < P; ++p) {
      for (std::size_t i = 0; i < S; ++i) feat[i] = state[i];
      for (std::size_t f = 0; f < F; ++f) feat[S + f] = actions.at({p, t, f});
      feat[S + F] = pos.at({p, 0});
      feat[S + F + 1] = pos.at({p, 1});
      for (std::size_t cell = 0; cell < H_ * W_; ++cell) {
        for (std::size_t c = 0; c < Cz_; ++c) {
          double v = 0.0;
          for (std::size_t k = 0; k < in; ++k) v += render_.at({cell, c, k}) * feat[k];
          out.at({p, t, cell / W_, cell % W_, c}) = static_cast<float>(v);
        }
      }
    }
    // advance with this frame's actions
    std::vector<double> total(nc, 0.0);
    for (std::size_t p = 0; p < P; ++p) {
      for (std::size_t j = 0; j < nc; ++j) {
        const double a = actions.at({p, t, layout_.discrete + j});
        total[j] += a;
        pos.at({p, 0}) += move_mix_.at({0, j}) * a;
        pos.at({p, 1}) += move_mix_.at({1, j}) * a;
      }
    }
    for (std::size_t i = 0; i < S; ++i) {
      for (std::size_t j = 0; j < nc; ++j) state[i] += state_mix_.at({i, j}) * total[j];
    }
  }
  return out;
}

}  // namespace hubsim
