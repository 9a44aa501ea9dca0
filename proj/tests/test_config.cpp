#include <filesystem>
#include <fstream>

#include "doctest.h"

#include "capt/config.hpp"

using namespace capt;
namespace fs = std::filesystem;

TEST_CASE("toy preset validates and hashes stably") {
  const RunConfig cfg = preset_run_config("toy");
  CHECK_NOTHROW(cfg.validate());
  CHECK(cfg.encoder.model_dim == 64);
  CHECK(cfg.adapter.out_dim == 128);
  CHECK(cfg.lm.model_dim == 128);
  CHECK(cfg.train_stage1.epochs == 20);
  CHECK(cfg.train_stage2.epochs == 30);
  CHECK(cfg.train_stage1.learning_rate == doctest::Approx(1e-3));
  CHECK(cfg.train_stage2.learning_rate == doctest::Approx(5e-4));

  const std::string h1 = config_hash(cfg);
  const std::string h2 = config_hash(preset_run_config("toy"));
  CHECK(h1 == h2);
  CHECK(h1.size() == 16);

  RunConfig other = cfg;
  other.seed = cfg.seed + 1;
  CHECK(config_hash(other) != h1);
}

TEST_CASE("paper preset mirrors the published hyperparameters") {
  const RunConfig cfg = preset_run_config("paper");
  CHECK_NOTHROW(cfg.validate());
  REQUIRE(cfg.encoder.conv.layers.size() == 7);
  CHECK(cfg.encoder.conv.layers[0].stride == 5);
  CHECK(cfg.encoder.conv.layers[0].kernel == 10);
  CHECK(cfg.encoder.conv.layers[6].kernel == 2);
  for (const auto& l : cfg.encoder.conv.layers) CHECK(l.channels == 512);
  CHECK(cfg.adapter.n_heads == 16);
  CHECK(cfg.adapter.pool_kernel == 2);
  CHECK(cfg.adapter.pool_stride == 2);
  CHECK(cfg.train_stage1.epochs == 2);
  CHECK(cfg.corpus.sample_rate == 16000);
}

TEST_CASE("explicit fields overlay the preset") {
  const json j = {{"preset", "toy"},
                  {"seed", 7},
                  {"encoder", {{"model_dim", 32}, {"n_heads", 2}}},
                  {"adapter", {{"in_dim", 32}, {"out_dim", 64}}},
                  {"lm", {{"model_dim", 64}}},
                  {"train_stage2", {{"epochs", 5}}}};
  const RunConfig cfg = run_config_from_json(j);
  CHECK_NOTHROW(cfg.validate());
  CHECK(cfg.seed == 7);
  CHECK(cfg.encoder.model_dim == 32);
  CHECK(cfg.adapter.out_dim == 64);
  CHECK(cfg.train_stage2.epochs == 5);
  CHECK(cfg.train_stage1.epochs == 20);  // untouched
  // train seeds default to the global seed
  CHECK(cfg.train_stage1.seed == 7);
  CHECK(cfg.train_stage2.seed == 7);
}

TEST_CASE("dimension chain violations name the offending fields") {
  json j = {{"preset", "toy"}, {"adapter", {{"out_dim", 96}}}};
  const RunConfig cfg = run_config_from_json(j);
  try {
    cfg.validate();
    FAIL("expected config error");
  } catch (const Error& e) {
    CHECK(e.code() == errc::config_invalid);
    CHECK(std::string(e.what()).find("adapter.out_dim") != std::string::npos);
  }
}

TEST_CASE("load_run_config round trips through a file") {
  const fs::path path = fs::temp_directory_path() / "capt_test_config.json";
  {
    std::ofstream out(path);
    out << R"({"preset":"toy","seed":123,"corpus":{"n_train":10,"n_test":4}})";
  }
  const RunConfig cfg = load_run_config(path);
  CHECK(cfg.seed == 123);
  CHECK(cfg.corpus.n_train == 10);
  CHECK(cfg.corpus.n_test == 4);
  CHECK(cfg.corpus.sample_rate == 2000);
  fs::remove(path);

  const fs::path bad = fs::temp_directory_path() / "capt_test_config_bad.json";
  {
    std::ofstream out(bad);
    out << "{nope";
  }
  CHECK_THROWS_AS(load_run_config(bad), Error);
  fs::remove(bad);
}
