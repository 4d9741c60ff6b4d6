#include "hubsim/checkpoint.hpp"

#include <fstream>
#include <stdexcept>

#include "hubsim/config_io.hpp"
#include "hubsim/errors.hpp"
#include "hubsim/tensor_io.hpp"

namespace hubsim {

namespace fs = std::filesystem;

void save_checkpoint(const fs::path& dir, const Model<float>& model, const CheckpointInfo& info) {
  fs::create_directories(dir / "params");
  nlohmann::json manifest;
  manifest["format"] = "hubsim-checkpoint";
  manifest["version"] = 1;
  manifest["config"] = to_json(model.config());
  manifest["seed"] = info.seed;
  manifest["step"] = info.step;
  nlohmann::json params = nlohmann::json::array();
  model.params().visit([&](const std::string& name, const Tensor& t) {
    const std::string file = "params/" + name + ".bin";
    write_tensor(dir / file, t);
    params.push_back({{"name", name}, {"file", file}, {"shape", t.shape()}});
  });
  manifest["params"] = params;
  std::ofstream out(dir / "manifest.json");
  if (!out) throw std::runtime_error("cannot write " + (dir / "manifest.json").string());
  out << manifest.dump(2) << '\n';
}

Model<float> load_checkpoint(const fs::path& dir, CheckpointInfo* info) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw std::runtime_error("no checkpoint manifest in " + dir.string());
  const nlohmann::json manifest = nlohmann::json::parse(in);
  if (manifest.value("format", "") != "hubsim-checkpoint") {
    throw std::runtime_error(dir.string() + " is not a checkpoint directory");
  }
  Model<float> model(model_config_from_json(manifest.at("config")));
  const auto& entries = manifest.at("params");
  std::size_t k = 0;
  model.params().visit([&](const std::string& name, Tensor& t) {
    if (k >= entries.size() || entries[k].at("name").get<std::string>() != name) {
      throw std::runtime_error("checkpoint: expected parameter '" + name + "' at index " +
                               std::to_string(k));
    }
    Tensor loaded = read_tensor<float>(dir / entries[k].at("file").get<std::string>());
    if (loaded.shape() != t.shape()) {
      throw ShapeError("checkpoint: '" + name + "' has shape " + shape_to_string(loaded.shape()) +
                       ", config needs " + shape_to_string(t.shape()));
    }
    t = std::move(loaded);
    ++k;
  });
  if (k != entries.size()) throw std::runtime_error("checkpoint: extra parameters in manifest");
  if (info) {
    info->seed = manifest.at("seed").get<std::uint64_t>();
    info->step = manifest.at("step").get<std::size_t>();
  }
  return model;
}

}  // namespace hubsim
