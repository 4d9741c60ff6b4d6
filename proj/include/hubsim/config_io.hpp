#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "hubsim/model.hpp"
#include "hubsim/training.hpp"

namespace hubsim {

nlohmann::json to_json(const ToyModelConfig& c);
ToyModelConfig model_config_from_json(const nlohmann::json& j);

// Flat "key = value" file; '#' starts a comment. Duplicate keys are errors.
using KeyValues = std::map<std::string, std::string>;
KeyValues parse_key_values(const std::string& text, const std::string& source = "config");
KeyValues read_key_values(const std::filesystem::path& path);

// Applies "model.*" keys to c and marks them used.
void apply_model_keys(ToyModelConfig& c, const KeyValues& kv, std::vector<std::string>& used);
// Applies "train.*" and "world.*" keys.
void apply_train_keys(TrainConfig& c, const KeyValues& kv, std::vector<std::string>& used);
// Throws naming the first key not in `used`.
void reject_unknown_keys(const KeyValues& kv, const std::vector<std::string>& used);

}  // namespace hubsim
