#pragma once

#include <cstdint>
#include <filesystem>

#include "hubsim/model.hpp"

namespace hubsim {

struct CheckpointInfo {
  std::uint64_t seed = 0;
  std::size_t step = 0;
};

// Writes <dir>/manifest.json (config, seed, step, parameter index) and one
// tensor dump per parameter under <dir>/params/.
void save_checkpoint(const std::filesystem::path& dir, const Model<float>& model,
                     const CheckpointInfo& info);

Model<float> load_checkpoint(const std::filesystem::path& dir, CheckpointInfo* info = nullptr);

}  // namespace hubsim
