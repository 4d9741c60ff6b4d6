#include <filesystem>

#include "doctest.h"
#include "hubsim/checkpoint.hpp"
#include "hubsim/config_io.hpp"

using namespace hubsim;

TEST_CASE("key value parsing") {
  const KeyValues kv = parse_key_values("# header\n  model.dim = 32  # inline\n\ntrain.lr=0.5\n");
  REQUIRE(kv.size() == 2);
  CHECK(kv.at("model.dim") == "32");
  CHECK(kv.at("train.lr") == "0.5");
  CHECK_THROWS_WITH(parse_key_values("a = 1\na = 2\n", "f.cfg"), doctest::Contains("f.cfg:2"));
  CHECK_THROWS(parse_key_values("no equals sign\n"));
  CHECK_THROWS(parse_key_values(" = 3\n"));
  CHECK_THROWS(read_key_values("/nonexistent/file.cfg"));
}

TEST_CASE("model and train keys") {
  ToyModelConfig m;
  TrainConfig t;
  std::vector<std::string> used;
  const KeyValues kv = parse_key_values(
      "model.rope = 8,8,8,8\nmodel.window = none\nmodel.alpha = 0.5\nmodel.action_kind = robot\n"
      "train.lr = 0.01\ntrain.steps = 7\nworld.press_rate = 0.3\n");
  apply_model_keys(m, kv, used);
  apply_train_keys(t, kv, used);
  CHECK_NOTHROW(reject_unknown_keys(kv, used));
  CHECK(m.rope == RopeBands{8, 8, 8, 8});
  CHECK_FALSE(m.window.has_value());
  CHECK(m.alpha == 0.5);
  CHECK(m.action_kind == ActionKind::robot);
  CHECK(t.lr == 0.01);
  CHECK(t.steps == 7);
  CHECK(t.world.press_rate == 0.3);

  used.clear();
  CHECK_THROWS(apply_model_keys(m, parse_key_values("model.dim = -4"), used));
  CHECK_THROWS(apply_model_keys(m, parse_key_values("model.rope = 1,2,3"), used));
  CHECK_THROWS(apply_train_keys(t, parse_key_values("train.lr = fast"), used));
  const KeyValues typo = parse_key_values("model.dims = 3");
  used.clear();
  apply_model_keys(m, typo, used);
  CHECK_THROWS_WITH(reject_unknown_keys(typo, used), doctest::Contains("model.dims"));
}

TEST_CASE("model config json round trip") {
  ToyModelConfig c = ToyModelConfig::tiny();
  c.window = std::nullopt;
  c.action_kind = ActionKind::robot;
  c.alpha = 0.25;
  const ToyModelConfig back = model_config_from_json(to_json(c));
  CHECK(to_json(back) == to_json(c));
  CHECK_FALSE(back.window.has_value());
  CHECK(back.action_kind == ActionKind::robot);
}

TEST_CASE("checkpoint round trip") {
  const auto dir = std::filesystem::temp_directory_path() / "hubsim_checkpoint_test";
  std::filesystem::remove_all(dir);
  Model<float> m(ToyModelConfig::tiny());
  m.initialize(21, InitStyle::dense);
  save_checkpoint(dir, m, {21, 5});
  CHECK(std::filesystem::exists(dir / "manifest.json"));
  CheckpointInfo info;
  const Model<float> back = load_checkpoint(dir, &info);
  CHECK(info.seed == 21);
  CHECK(info.step == 5);
  CHECK(to_json(back.config()) == to_json(m.config()));
  std::vector<const Tensor*> a, b;
  m.params().visit([&](const std::string&, const Tensor& t) { a.push_back(&t); });
  back.params().visit([&](const std::string&, const Tensor& t) { b.push_back(&t); });
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(*a[i] == *b[i]);
  std::filesystem::remove_all(dir);
  CHECK_THROWS(load_checkpoint(dir));
}
