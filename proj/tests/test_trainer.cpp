#include <cstring>
#include <filesystem>
#include <vector>

#include "doctest.h"

#include "capt/checkpoint.hpp"
#include "capt/serde.hpp"
#include "capt/trainer.hpp"

using namespace capt;
namespace fs = std::filesystem;

namespace {

// A miniature pipeline that trains in well under a second per epoch.
struct TinySetup {
  EncoderConfig enc;
  AdapterConfig adap;
  LMConfig lm;
  PhonemeInventory inventory;

  TinySetup() {
    enc.conv.layers = {{16, 10, 5}, {16, 3, 2}};
    enc.n_transformer_layers = 1;
    enc.model_dim = 16;
    enc.n_heads = 2;
    enc.ffn_dim = 32;
    adap.in_dim = 16;
    adap.out_dim = 24;
    adap.n_heads = 2;
    lm.n_layers = 2;
    lm.model_dim = 24;
    lm.n_heads = 2;
    lm.ffn_dim = 48;
    lm.max_seq_len = 128;
    inventory = PhonemeInventory::default_inventory(6);
    for (auto& d : inventory.base_duration_ms) d = 60.0;
  }

  std::vector<Utterance> utterances(int n, uint64_t seed) const {
    std::vector<Utterance> utts;
    Rng rng(seed);
    for (int i = 0; i < n; ++i) {
      UtteranceSpec spec;
      const int len = rng.uniform_int(2, 3);
      for (int j = 0; j < len; ++j)
        spec.prompt_tokens.push_back(
            inventory.symbols[static_cast<size_t>(rng.uniform_int(0, inventory.size() - 1))]);
      spec.substitution_prob = 0.3;
      spec.pause_insertion_prob = 0.3;
      spec.tempo_jitter = 0.2;
      spec.pause_duration_ms = 80.0;
      spec.seed = mix_seed(seed, static_cast<uint64_t>(i));
      Utterance utt = render_utterance(spec, inventory, 2000);
      utt.id = "tiny-" + std::to_string(i);
      utts.push_back(std::move(utt));
    }
    return utts;
  }
};

template <typename T>
std::vector<unsigned char> group_bytes(const ParamSet<T>& ps, ParamGroup group) {
  std::vector<unsigned char> bytes;
  for (int i = 0; i < ps.count(); ++i) {
    if (ps.entry(i).group != group) continue;
    const auto& v = ps.entry(i).value;
    const size_t off = bytes.size();
    bytes.resize(off + v.size() * sizeof(T));
    std::memcpy(bytes.data() + off, v.data(), v.size() * sizeof(T));
  }
  return bytes;
}

}  // namespace

TEST_CASE("freeze_mask freezes the LM and nothing else, both stages") {
  for (int stage : {1, 2}) {
    const FreezeFlags frozen = freeze_mask(stage);
    CHECK(!frozen[static_cast<size_t>(ParamGroup::encoder)]);
    CHECK(!frozen[static_cast<size_t>(ParamGroup::adapter)]);
    CHECK(frozen[static_cast<size_t>(ParamGroup::lm)]);
  }
  try {
    freeze_mask(3);
    FAIL("expected stage error");
  } catch (const Error& e) {
    CHECK(e.code() == errc::invalid_stage);
  }
}

TEST_CASE("make_target builds the staged prefixes and targets") {
  const Vocabulary vocab;
  Utterance utt;
  utt.spoken_tokens = "abc";
  utt.prompt_tokens = "abd";
  utt.accuracy = 9;
  utt.fluency = 7;

  const auto [asr_bundle, asr_target] = make_target(vocab, 1, utt, true);
  CHECK(asr_bundle.task == TaskKind::asr);
  CHECK(asr_bundle.token_ids == std::vector<int>{Vocabulary::prefix_asr});
  CHECK(asr_target == "a b c");

  const auto [sc_bundle, sc_target] = make_target(vocab, 2, utt, true);
  CHECK(sc_bundle.task == TaskKind::scoring);
  CHECK(vocab.detokenize(sc_bundle.token_ids) ==
        "<Pronunciation Assessment> the prompt text is a b d");
  CHECK(sc_target == "accuracy:9 fluency:7");

  const auto [bare_bundle, bare_target] = make_target(vocab, 2, utt, false);
  CHECK(bare_bundle.token_ids == std::vector<int>{Vocabulary::prefix_pa});
  CHECK(bare_target == "accuracy:9 fluency:7");

  CHECK_THROWS_AS(make_target(vocab, 0, utt, true), Error);
}

TEST_CASE("train_stage leaves LM parameters bitwise unchanged and is deterministic") {
  const TinySetup setup;
  const auto data = setup.utterances(10, 5);

  TrainConfig cfg = TrainConfig::toy_defaults(1);
  cfg.epochs = 2;
  cfg.batch_size = 4;
  cfg.seed = 3;
  cfg.threads = 2;

  auto init = init_model_state<float>(setup.enc, setup.adap, setup.lm, 17);
  const auto lm_before = group_bytes(init.params, ParamGroup::lm);
  const auto enc_before = group_bytes(init.params, ParamGroup::encoder);

  const auto run1 = train_stage(cfg, data, init_model_state<float>(setup.enc, setup.adap,
                                                                   setup.lm, 17));
  const auto run2 = train_stage(cfg, data, init_model_state<float>(setup.enc, setup.adap,
                                                                   setup.lm, 17));

  CHECK(group_bytes(run1.state.params, ParamGroup::lm) == lm_before);
  CHECK(group_bytes(run1.state.params, ParamGroup::encoder) != enc_before);
  CHECK(run1.state.provenance == StageProvenance::stage1);
  REQUIRE(run1.log.size() == 2);
  CHECK(run1.log[0].split == "train");

  // bitwise determinism across runs (same build, fixed thread-count-independent
  // reduction order)
  CHECK(group_bytes(run1.state.params, ParamGroup::encoder) ==
        group_bytes(run2.state.params, ParamGroup::encoder));
  CHECK(group_bytes(run1.state.params, ParamGroup::adapter) ==
        group_bytes(run2.state.params, ParamGroup::adapter));
  CHECK(run1.log[1].loss == run2.log[1].loss);

  // a single-threaded run reduces gradients in the same order
  TrainConfig cfg1 = cfg;
  cfg1.threads = 1;
  const auto run3 = train_stage(cfg1, data, init_model_state<float>(setup.enc, setup.adap,
                                                                    setup.lm, 17));
  CHECK(group_bytes(run3.state.params, ParamGroup::encoder) ==
        group_bytes(run1.state.params, ParamGroup::encoder));
}

TEST_CASE("short single-batch training reduces the loss for both stages") {
  const TinySetup setup;
  const auto data = setup.utterances(4, 8);
  for (int stage : {1, 2}) {
    TrainConfig cfg = TrainConfig::toy_defaults(stage);
    cfg.epochs = 60;  // 4 utterances, batch 4: one step per epoch
    cfg.batch_size = 4;
    cfg.seed = 2;
    cfg.threads = 2;
    const auto run = train_stage(cfg, data,
                                 init_model_state<float>(setup.enc, setup.adap, setup.lm, 23));
    const double initial = run.log.front().loss;
    const double last = run.log.back().loss;
    CHECK(last < 0.5 * initial);
  }
}

TEST_CASE("checkpoint save/load round trip is bitwise identical") {
  const TinySetup setup;
  auto state = init_model_state<float>(setup.enc, setup.adap, setup.lm, 99);
  state.provenance = StageProvenance::stage2;
  state.init_from_stage1 = true;

  const fs::path path = fs::temp_directory_path() / "capt_test_ckpt.bin";
  save_checkpoint(path, state);
  const auto loaded = load_checkpoint<float>(path);

  CHECK(loaded.seed == state.seed);
  CHECK(loaded.provenance == StageProvenance::stage2);
  CHECK(loaded.init_from_stage1 == true);
  CHECK(loaded.params.count() == state.params.count());
  for (int i = 0; i < state.params.count(); ++i) {
    const auto& a = state.params.entry(i);
    const auto& b = loaded.params.entry(i);
    CHECK(a.name == b.name);
    REQUIRE(a.value.size() == b.value.size());
    CHECK(std::memcmp(a.value.data(), b.value.data(), a.value.size() * sizeof(float)) == 0);
  }

  // save -> load -> save reproduces the same bytes
  const fs::path path2 = fs::temp_directory_path() / "capt_test_ckpt2.bin";
  save_checkpoint(path2, loaded);
  CHECK(read_file(path) == read_file(path2));
  fs::remove(path);
  fs::remove(path2);
}

TEST_CASE("stage-2 configs differ from scratch configs only via init_from") {
  TrainConfig from_stage1 = TrainConfig::toy_defaults(2);
  from_stage1.init_from = "runs/stage1.ckpt";
  TrainConfig from_scratch = TrainConfig::toy_defaults(2);

  json a = to_json(from_stage1);
  json b = to_json(from_scratch);
  int diffs = 0;
  for (auto& [key, value] : a.items()) {
    if (b.at(key) != value) {
      ++diffs;
      CHECK(key == "init_from");
    }
  }
  CHECK(diffs == 1);
}

TEST_CASE("train_stage rejects mismatched configs") {
  const TinySetup setup;
  const auto data = setup.utterances(4, 4);
  TrainConfig cfg = TrainConfig::toy_defaults(1);
  cfg.epochs = 1;
  ModelState<float> state = init_model_state<float>(setup.enc, setup.adap, setup.lm, 1);
  state.adapter_config.out_dim = setup.lm.model_dim + 8;  // break the dim chain
  CHECK_THROWS_AS(train_stage(cfg, data, std::move(state)), Error);
}
