#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "hubsim/tensor.hpp"

namespace hubsim {

enum class ActionKind { game, robot };

const char* to_string(ActionKind kind);
ActionKind action_kind_from_string(const std::string& s);

// Field split of an action vector: binary controls first, then continuous.
struct ActionLayout {
  std::size_t discrete = 0;
  std::size_t continuous = 0;
  std::size_t fields() const { return discrete + continuous; }
};

ActionLayout action_layout(ActionKind kind);

// Game: 23 binary controls (0 inventory, 1 ESC, 2-10 hotbar.1-9,
// 11-14 forward/back/left/right, 15-17 jump/sneak/sprint, 18 swapHands,
// 19-22 attack/use/pickItem/drop) then 24 cameraX, 25 cameraY.
inline constexpr std::array<std::string_view, 25> kGameFields = {
    "inventory", "ESC",     "hotbar.1", "hotbar.2", "hotbar.3",  "hotbar.4", "hotbar.5",
    "hotbar.6",  "hotbar.7", "hotbar.8", "hotbar.9", "forward",   "back",     "left",
    "right",     "jump",    "sneak",    "sprint",   "swapHands", "attack",   "use",
    "pickItem",  "drop",    "cameraX",  "cameraY"};

// Robot: end-effector position, 6D orientation, gripper.
inline constexpr std::array<std::string_view, 10> kRobotFields = {
    "pos_x",     "pos_y",     "pos_z",     "rot_6d_0", "rot_6d_1",
    "rot_6d_2",  "rot_6d_3",  "rot_6d_4",  "rot_6d_5", "gripper"};

// One agent's controls at one frame.
struct ActionFrame {
  ActionKind kind = ActionKind::game;
  std::vector<float> fields;

  static ActionFrame zeros(ActionKind kind);
  // Throws on a wrong field count, a non-binary control, or a non-finite value.
  void validate() const;
};

// Averages consecutive groups of `stride` raw frames into one latent frame.
// raw: (P, frames, F) with frames divisible by stride.
Tensor downsample_actions(const Tensor& raw, std::size_t stride);

}  // namespace hubsim
