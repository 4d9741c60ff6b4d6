#include "hubsim/action.hpp"

#include <cmath>
#include <stdexcept>

#include "hubsim/errors.hpp"

namespace hubsim {

const char* to_string(ActionKind kind) { return kind == ActionKind::game ? "game" : "robot"; }

ActionKind action_kind_from_string(const std::string& s) {
  if (s == "game") return ActionKind::game;
  if (s == "robot") return ActionKind::robot;
  throw std::invalid_argument("unknown action kind '" + s + "' (expected game or robot)");
}

ActionLayout action_layout(ActionKind kind) {
  if (kind == ActionKind::game) return {23, 2};
  return {0, 10};
}

ActionFrame ActionFrame::zeros(ActionKind kind) {
  return ActionFrame{kind, std::vector<float>(action_layout(kind).fields(), 0.0f)};
}

void ActionFrame::validate() const {
  const ActionLayout layout = action_layout(kind);
  if (fields.size() != layout.fields()) {
    throw std::invalid_argument(std::string(to_string(kind)) + " action needs " +
                                std::to_string(layout.fields()) + " fields, got " +
                                std::to_string(fields.size()));
  }
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (!std::isfinite(fields[i])) {
      throw std::invalid_argument("action field " + std::to_string(i) + " is not finite");
    }
    if (i < layout.discrete && fields[i] != 0.0f && fields[i] != 1.0f) {
      throw std::invalid_argument("binary action field " + std::to_string(i) + " is " +
                                  std::to_string(fields[i]));
    }
  }
}

Tensor downsample_actions(const Tensor& raw, std::size_t stride) {
  if (raw.rank() != 3 || stride == 0 || raw.extent(1) % stride != 0) {
    throw ShapeError("downsample_actions: raw " + shape_to_string(raw.shape()) +
                     " with stride " + std::to_string(stride));
  }
  const std::size_t P = raw.extent(0);
  const std::size_t frames = raw.extent(1) / stride;
  const std::size_t F = raw.extent(2);
  Tensor out({P, frames, F}, 0.0f);
  for (std::size_t p = 0; p < P; ++p) {
    for (std::size_t t = 0; t < frames; ++t) {
      for (std::size_t f = 0; f < F; ++f) {
        float s = 0.0f;
        for (std::size_t r = 0; r < stride; ++r) s += raw.at({p, t * stride + r, f});
        out.at({p, t, f}) = s / static_cast<float>(stride);
      }
    }
  }
  return out;
}

}  // namespace hubsim
