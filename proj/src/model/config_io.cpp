#include "hubsim/config_io.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>

namespace hubsim {

using nlohmann::json;

json to_json(const ToyModelConfig& c) {
  json j;
  j["model_dim"] = c.model_dim;
  j["layers"] = c.layers;
  j["heads"] = c.heads;
  j["head_dim"] = c.head_dim;
  j["mlp_ratio"] = c.mlp_ratio;
  j["rope"] = {c.rope.t, c.rope.p, c.rope.h, c.rope.w};
  j["rope_base"] = c.rope_base;
  j["pool_size"] = c.pool_size;
  j["alpha"] = c.alpha;
  j["hub_tokens"] = c.hub_tokens;
  j["height"] = c.height;
  j["width"] = c.width;
  j["latent_channels"] = c.latent_channels;
  j["block_frames"] = c.block_frames;
  j["window"] = c.window ? json(*c.window) : json(nullptr);
  j["sigma_embed_dim"] = c.sigma_embed_dim;
  j["action_branch"] = c.action_branch;
  j["action_kind"] = to_string(c.action_kind);
  return j;
}

ToyModelConfig model_config_from_json(const json& j) {
  ToyModelConfig c;
  c.model_dim = j.at("model_dim").get<std::size_t>();
  c.layers = j.at("layers").get<std::size_t>();
  c.heads = j.at("heads").get<std::size_t>();
  c.head_dim = j.at("head_dim").get<std::size_t>();
  c.mlp_ratio = j.at("mlp_ratio").get<std::size_t>();
  const auto r = j.at("rope").get<std::vector<std::size_t>>();
  if (r.size() != 4) throw std::invalid_argument("config: rope needs 4 band sizes");
  c.rope = {r[0], r[1], r[2], r[3]};
  c.rope_base = j.at("rope_base").get<double>();
  c.pool_size = j.at("pool_size").get<std::size_t>();
  c.alpha = j.at("alpha").get<double>();
  c.hub_tokens = j.at("hub_tokens").get<std::size_t>();
  c.height = j.at("height").get<std::size_t>();
  c.width = j.at("width").get<std::size_t>();
  c.latent_channels = j.at("latent_channels").get<std::size_t>();
  c.block_frames = j.at("block_frames").get<std::size_t>();
  if (j.at("window").is_null()) {
    c.window = std::nullopt;
  } else {
    c.window = j.at("window").get<std::size_t>();
  }
  c.sigma_embed_dim = j.at("sigma_embed_dim").get<std::size_t>();
  c.action_branch = j.at("action_branch").get<std::size_t>();
  c.action_kind = action_kind_from_string(j.at("action_kind").get<std::string>());
  c.validate();
  return c;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::size_t to_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size()) {
    throw std::invalid_argument("config: " + key + " expects a non-negative integer, got '" + v + "'");
  }
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != v.size()) {
    throw std::invalid_argument("config: " + key + " expects a number, got '" + v + "'");
  }
  return out;
}

using Setter = std::function<void(const std::string& key, const std::string& value)>;

void apply_table(const KeyValues& kv, const std::map<std::string, Setter>& table,
                 std::vector<std::string>& used) {
  for (const auto& [key, value] : kv) {
    const auto it = table.find(key);
    if (it == table.end()) continue;
    it->second(key, value);
    used.push_back(key);
  }
}

}  // namespace

KeyValues parse_key_values(const std::string& text, const std::string& source) {
  KeyValues kv;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument(source + ":" + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw std::invalid_argument(source + ":" + std::to_string(lineno) + ": empty key");
    if (!kv.emplace(key, value).second) {
      throw std::invalid_argument(source + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
    }
  }
  return kv;
}

KeyValues read_key_values(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_key_values(ss.str(), path.string());
}

void apply_model_keys(ToyModelConfig& c, const KeyValues& kv, std::vector<std::string>& used) {
  auto sz = [](std::size_t& field) {
    return [&field](const std::string& k, const std::string& v) { field = to_size(k, v); };
  };
  const std::map<std::string, Setter> table = {
      {"model.dim", sz(c.model_dim)},
      {"model.layers", sz(c.layers)},
      {"model.heads", sz(c.heads)},
      {"model.head_dim", sz(c.head_dim)},
      {"model.mlp_ratio", sz(c.mlp_ratio)},
      {"model.pool_size", sz(c.pool_size)},
      {"model.hubs", sz(c.hub_tokens)},
      {"model.height", sz(c.height)},
      {"model.width", sz(c.width)},
      {"model.channels", sz(c.latent_channels)},
      {"model.block", sz(c.block_frames)},
      {"model.sigma_embed", sz(c.sigma_embed_dim)},
      {"model.action_branch", sz(c.action_branch)},
      {"model.alpha", [&c](const std::string& k, const std::string& v) { c.alpha = to_double(k, v); }},
      {"model.rope_base",
       [&c](const std::string& k, const std::string& v) { c.rope_base = to_double(k, v); }},
      {"model.window",
       [&c](const std::string& k, const std::string& v) {
         if (v == "none") {
           c.window = std::nullopt;
         } else {
           c.window = to_size(k, v);
         }
       }},
      {"model.action_kind",
       [&c](const std::string&, const std::string& v) { c.action_kind = action_kind_from_string(v); }},
      {"model.rope",
       [&c](const std::string& k, const std::string& v) {
         std::vector<std::size_t> bands;
         std::stringstream ss(v);
         std::string item;
         while (std::getline(ss, item, ',')) bands.push_back(to_size(k, trim(item)));
         if (bands.size() != 4) throw std::invalid_argument("config: " + k + " needs t,p,h,w");
         c.rope = {bands[0], bands[1], bands[2], bands[3]};
       }},
  };
  apply_table(kv, table, used);
}

void apply_train_keys(TrainConfig& c, const KeyValues& kv, std::vector<std::string>& used) {
  auto sz = [](std::size_t& field) {
    return [&field](const std::string& k, const std::string& v) { field = to_size(k, v); };
  };
  auto dbl = [](double& field) {
    return [&field](const std::string& k, const std::string& v) { field = to_double(k, v); };
  };
  const std::map<std::string, Setter> table = {
      {"train.steps", sz(c.steps)},
      {"train.batch", sz(c.batch)},
      {"train.agents", sz(c.agents)},
      {"train.frames", sz(c.frames)},
      {"train.eval_batch", sz(c.eval_batch)},
      {"train.eval_every", sz(c.eval_every)},
      {"train.lr", dbl(c.lr)},
      {"train.momentum", dbl(c.momentum)},
      {"train.seed", [&c](const std::string& k, const std::string& v) { c.seed = to_size(k, v); }},
      {"world.state_dim", sz(c.world.state_dim)},
      {"world.seed",
       [&c](const std::string& k, const std::string& v) { c.world.world_seed = to_size(k, v); }},
      {"world.state_gain", dbl(c.world.state_gain)},
      {"world.move_gain", dbl(c.world.move_gain)},
      {"world.press_rate", dbl(c.world.press_rate)},
      {"world.action_scale", dbl(c.world.action_scale)},
  };
  apply_table(kv, table, used);
}

void reject_unknown_keys(const KeyValues& kv, const std::vector<std::string>& used) {
  for (const auto& [key, value] : kv) {
    if (std::find(used.begin(), used.end(), key) == used.end()) {
      throw std::invalid_argument("config: unknown key '" + key + "'");
    }
  }
}

}  // namespace hubsim
