#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "dass/checkpoint.hpp"
#include "dass/config_io.hpp"

using namespace dass;

namespace {

Mat<float> random_spec(Rng& rng, int t, int f) {
  Mat<float> m(t, f);
  for (auto& v : m.v) v = float(rng.normal());
  return m;
}

}  // namespace

TEST_CASE("checkpoint: save/load round trip is bit-exact for both model kinds") {
  auto tmp = std::filesystem::temp_directory_path() / "dass_ckpt_test.bin";

  ModelConfig mc = ModelConfig::tiny(5);
  DassClassifier<float> dass_model(mc);
  dass_model.model().init_params(7);
  Rng rng(8);
  auto spec = random_spec(rng, 32, 16);
  auto want = dass_model.forward(spec);

  auto data = checkpoint_from(dass_model, 3, 7);
  save_checkpoint(tmp.string(), data);
  auto loaded = load_checkpoint(tmp.string());
  CHECK(loaded.model_kind == "dass");
  CHECK(loaded.epoch == 3);
  CHECK(loaded.seed == 7);
  auto restored = classifier_from_checkpoint(loaded);
  auto got = restored->forward(spec);
  REQUIRE(got.size() == want.size());
  for (std::size_t i = 0; i < want.size(); ++i) CHECK(got[i] == want[i]);

  AttnConfig ac = AttnConfig::toy(4);
  AttnClassifier<float> attn_model(ac);
  attn_model.model().init_params(9);
  auto want2 = attn_model.forward(spec);
  save_checkpoint(tmp.string(), checkpoint_from(attn_model, 1, 9));
  auto restored2 = classifier_from_checkpoint(load_checkpoint(tmp.string()));
  auto got2 = restored2->forward(spec);
  for (std::size_t i = 0; i < want2.size(); ++i) CHECK(got2[i] == want2[i]);

  std::filesystem::remove(tmp);
}

TEST_CASE("checkpoint: identical saves produce identical file hashes") {
  auto t1 = std::filesystem::temp_directory_path() / "dass_ckpt_h1.bin";
  auto t2 = std::filesystem::temp_directory_path() / "dass_ckpt_h2.bin";
  DassClassifier<float> model(ModelConfig::tiny(3));
  model.model().init_params(11);
  save_checkpoint(t1.string(), checkpoint_from(model, 0, 11));
  save_checkpoint(t2.string(), checkpoint_from(model, 0, 11));
  CHECK(file_hash(t1.string()) == file_hash(t2.string()));
  std::filesystem::remove(t1);
  std::filesystem::remove(t2);
}

TEST_CASE("checkpoint: optimizer moments survive the round trip") {
  auto tmp = std::filesystem::temp_directory_path() / "dass_ckpt_opt.bin";
  DassClassifier<float> model(ModelConfig::tiny(3));
  model.model().init_params(12);
  std::vector<float> m(model.theta().size(), 0.25f), v(model.theta().size(), 0.5f);
  save_checkpoint(tmp.string(), checkpoint_from(model, 2, 12, &m, &v, 42));
  auto loaded = load_checkpoint(tmp.string());
  CHECK(loaded.adam_step == 42);
  bool found_m = false, found_v = false;
  for (std::size_t i = 0; i < loaded.names.size(); ++i) {
    if (loaded.names[i] == "optim.adam.m") {
      found_m = true;
      CHECK(loaded.arrays[i] == m);
    }
    if (loaded.names[i] == "optim.adam.v") found_v = true;
  }
  CHECK(found_m);
  CHECK(found_v);
  // moments do not break model restoration
  auto restored = classifier_from_checkpoint(loaded);
  CHECK(restored->theta() == model.theta());
  std::filesystem::remove(tmp);
}

TEST_CASE("checkpoint: corrupt and mismatched files are rejected") {
  auto tmp = std::filesystem::temp_directory_path() / "dass_ckpt_bad.bin";
  {
    std::ofstream f(tmp, std::ios::binary);
    f << "not a checkpoint at all";
  }
  CHECK_THROWS_AS(load_checkpoint(tmp.string()), IoError);
  CHECK_THROWS_AS(load_checkpoint("/tmp/definitely_missing.ckpt"), IoError);

  // array renamed -> unknown name on restore
  DassClassifier<float> model(ModelConfig::tiny(3));
  model.model().init_params(13);
  auto data = checkpoint_from(model, 0, 13);
  data.names[0] = "bogus.array";
  save_checkpoint(tmp.string(), data);
  CHECK_THROWS_AS(classifier_from_checkpoint(load_checkpoint(tmp.string())), IoError);

  // missing array -> incomplete parameter set
  auto data2 = checkpoint_from(model, 0, 13);
  data2.names.pop_back();
  data2.dims.pop_back();
  data2.arrays.pop_back();
  CHECK_THROWS_AS(classifier_from_checkpoint(data2), IoError);
  std::filesystem::remove(tmp);
}

TEST_CASE("model config json round trip") {
  ModelConfig cfg = ModelConfig::dass_small(17);
  cfg.pooling = Pooling::Last;
  cfg.tie_directions = true;
  auto cfg2 = model_config_from_json(model_config_json(cfg));
  CHECK(cfg2.group_depths == cfg.group_depths);
  CHECK(cfg2.channel_dims == cfg.channel_dims);
  CHECK(cfg2.num_classes == 17);
  CHECK(cfg2.pooling == Pooling::Last);
  CHECK(cfg2.tie_directions == true);

  AttnConfig ac = AttnConfig::toy(9);
  ac.memory_budget = 12345678;
  auto ac2 = attn_config_from_json(attn_config_json(ac));
  CHECK(ac2.num_classes == 9);
  CHECK(ac2.memory_budget == 12345678);
  CHECK(ac2.width == ac.width);
}

TEST_CASE("kv config: parse, types, overrides, serialization") {
  auto cfg = KvConfig::from_string(
      "# a comment\n"
      "train.lr = 1e-4\n"
      "train.batch_size = 12\n"
      "model.pooling = mean\n"
      "flag.on = true\n");
  CHECK(cfg.get_double("train.lr", 0) == doctest::Approx(1e-4));
  CHECK(cfg.get_int("train.batch_size", 0) == 12);
  CHECK(cfg.get_str("model.pooling", "") == "mean");
  CHECK(cfg.get_bool("flag.on", false));
  CHECK(cfg.get_int("missing.key", 99) == 99);
  CHECK_THROWS_AS(cfg.require_str("missing.key"), InvalidArgument);
  CHECK_THROWS_AS(cfg.get_int("model.pooling", 0), InvalidArgument);

  cfg.set("train.lr", "5e-5");
  auto text = cfg.to_string();
  auto cfg2 = KvConfig::from_string(text);
  CHECK(cfg2.get_double("train.lr", 0) == doctest::Approx(5e-5));

  CHECK_THROWS_AS(KvConfig::from_string("keywithoutvalue\n"), InvalidArgument);
  CHECK_THROWS_AS(KvConfig::from_file("/tmp/missing_config_file.conf"), IoError);
  try {
    KvConfig::from_file("/tmp/missing_config_file.conf");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("/tmp/missing_config_file.conf") != std::string::npos);
  }
}
