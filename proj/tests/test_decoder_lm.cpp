#include <algorithm>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"

#include "capt/decoder_lm.hpp"
#include "capt/text.hpp"
#include "test_util.hpp"

using namespace capt;
using capt_test::random_mat;

namespace {

LMConfig tiny_lm() {
  LMConfig cfg;
  cfg.n_layers = 2;
  cfg.model_dim = 16;
  cfg.n_heads = 2;
  cfg.ffn_dim = 32;
  cfg.max_seq_len = 96;
  return cfg;
}

struct TinyModel {
  LMConfig cfg = tiny_lm();
  Vocabulary vocab;
  ParamSet<double> ps;
  LmHandles<double> handles;

  explicit TinyModel(uint64_t seed) { handles = make_lm_params(ps, cfg, vocab.size(), seed); }
};

}  // namespace

TEST_CASE("tokenizer round trip over the vocabulary alphabet") {
  const Vocabulary vocab;
  Rng rng(41);
  const std::string alphabet = vocab.alphabet();
  for (int trial = 0; trial < 50; ++trial) {
    std::string text;
    const int len = rng.uniform_int(0, 40);
    for (int i = 0; i < len; ++i)
      text.push_back(alphabet[static_cast<size_t>(
          rng.uniform_int(0, static_cast<int>(alphabet.size()) - 1))]);
    CHECK(vocab.detokenize(vocab.tokenize(text)) == text);
  }
  CHECK_THROWS_AS(vocab.tokenize("UPPER"), Error);
}

TEST_CASE("build_text_input follows the task templates") {
  const Vocabulary vocab;

  const PromptBundle scoring = build_text_input(vocab, TaskKind::scoring, "ka lo mi");
  CHECK(vocab.detokenize(scoring.token_ids) ==
        "<Pronunciation Assessment> the prompt text is ka lo mi");
  CHECK(scoring.token_ids[0] == Vocabulary::prefix_pa);

  const PromptBundle asr = build_text_input(vocab, TaskKind::asr, std::nullopt);
  CHECK(asr.token_ids == std::vector<int>{Vocabulary::prefix_asr});
  CHECK(vocab.detokenize(asr.token_ids) == "<transcript>");

  const PromptBundle no_prompt = build_text_input(vocab, TaskKind::scoring, std::nullopt);
  CHECK(no_prompt.token_ids == std::vector<int>{Vocabulary::prefix_pa});

  try {
    build_text_input(vocab, TaskKind::scoring, std::string(""));
    FAIL("expected empty-prompt error");
  } catch (const Error& e) {
    CHECK(e.code() == errc::empty_prompt);
  }
  CHECK_THROWS_AS(build_text_input(vocab, TaskKind::asr, std::string("x")), Error);
}

TEST_CASE("score codec: format and parse are exact inverses") {
  CHECK(format_score({9, 7}) == "accuracy:9 fluency:7");
  CHECK(parse_score("accuracy:9 fluency:7") == ScorePair{9, 7});

  // exhaustive over all 121 pairs
  for (int a = 0; a <= 10; ++a)
    for (int f = 0; f <= 10; ++f) {
      const ScorePair s{a, f};
      const auto back = parse_score(format_score(s));
      REQUIRE(back.has_value());
      CHECK(*back == s);
    }

  ScoreParseError err;
  CHECK(!parse_score("accuracy:11 fluency:3", &err).has_value());
  CHECK(err == ScoreParseError::range);
  CHECK(!parse_score("fluency:7 accuracy:9", &err).has_value());
  CHECK(err == ScoreParseError::order);
  CHECK(!parse_score("accuracy:9 accuracy:7", &err).has_value());
  CHECK(err == ScoreParseError::order);
  CHECK(!parse_score("accuracy: fluency:3", &err).has_value());
  CHECK(err == ScoreParseError::non_integer);
  CHECK(!parse_score("accuracy:07 fluency:3", &err).has_value());
  CHECK(err == ScoreParseError::format);
  CHECK(!parse_score("accuracy:9 fluency:7 ", &err).has_value());
  CHECK(err == ScoreParseError::format);
  CHECK(!parse_score("accuracy:9fluency:7", &err).has_value());
  CHECK(err == ScoreParseError::format);
  CHECK(!parse_score("", &err).has_value());
  CHECK(err == ScoreParseError::format);
  CHECK(!parse_score("accuracy:123 fluency:3", &err).has_value());
  CHECK(err == ScoreParseError::range);
}

TEST_CASE("score grammar accepts exactly the codec language") {
  const Vocabulary vocab;
  // BFS over the DFA enumerates the full language.
  std::set<std::string> language;
  struct Item {
    ScoreGrammar grammar;
    std::string text;
  };
  std::vector<Item> frontier{{ScoreGrammar(vocab), ""}};
  while (!frontier.empty()) {
    std::vector<Item> next;
    for (const Item& item : frontier) {
      for (int id : item.grammar.allowed_ids()) {
        if (id == Vocabulary::eos) {
          language.insert(item.text);
          continue;
        }
        Item extended = item;
        extended.grammar.advance(id);
        extended.text.push_back(vocab.id_char(id));
        next.push_back(std::move(extended));
      }
    }
    frontier = std::move(next);
  }
  CHECK(language.size() == 121);
  for (const std::string& s : language) CHECK(parse_score(s).has_value());
  for (int a = 0; a <= 10; ++a)
    for (int f = 0; f <= 10; ++f) CHECK(language.count(format_score({a, f})) == 1);
}

TEST_CASE("forward length bookkeeping and loss oracle") {
  TinyModel model(5);
  Rng rng(6);
  const int t_s = 7;
  Mat<double> speech = random_mat(t_s, model.cfg.model_dim, rng, 0.5);
  const PromptBundle bundle = build_text_input(model.vocab, TaskKind::scoring, "ab");
  const std::vector<int> target_ids = model.vocab.tokenize("accuracy:4 fluency:9");

  Graph<double> g;
  const auto bound = bind_params(g, model.ps, {true, true, true});
  const auto speech_id = g.leaf(speech, false);
  const auto out = lm_forward(g, speech_id, bundle.token_ids, target_ids, bound, model.handles,
                              model.cfg);

  const int t_t = static_cast<int>(bundle.token_ids.size());
  const int m = static_cast<int>(target_ids.size());
  CHECK(out.seq_len == t_s + t_t + m + 2);
  CHECK(g.val(out.logits).rows() == out.seq_len);
  CHECK(out.loss_row0 == t_s + t_t);
  CHECK(out.n_loss_rows == m + 1);

  // independent softmax/NLL oracle over the returned logits
  const Mat<double>& logits = g.val(out.logits);
  std::vector<int> labels = target_ids;
  labels.push_back(Vocabulary::eos);
  double manual = 0.0;
  for (size_t i = 0; i < labels.size(); ++i) {
    const int row = out.loss_row0 + static_cast<int>(i);
    double mx = logits(row, 0);
    for (int j = 1; j < logits.cols(); ++j) mx = std::max(mx, logits(row, j));
    double denom = 0.0;
    for (int j = 0; j < logits.cols(); ++j) denom += std::exp(logits(row, j) - mx);
    manual -= logits(row, labels[i]) - mx - std::log(denom);
  }
  manual /= static_cast<double>(labels.size());
  CHECK(g.val(out.loss)(0, 0) == doctest::Approx(manual).epsilon(1e-10));

  // loss masking: gradient w.r.t. logits vanishes outside the target rows
  g.backward(out.loss);
  const Mat<double>& dl = g.grad(out.logits);
  REQUIRE(!dl.empty());
  for (int r = 0; r < out.loss_row0; ++r)
    for (int c = 0; c < dl.cols(); ++c) CHECK(dl(r, c) == 0.0);
  for (int c = 0; c < dl.cols(); ++c) CHECK(dl(dl.rows() - 1, c) == 0.0);

  // overlength guard
  LMConfig small = model.cfg;
  small.max_seq_len = 16;
  Graph<double> g2;
  const auto bound2 = bind_params(g2, model.ps, {true, true, true});
  const auto speech2 = g2.leaf(speech, false);
  CHECK_THROWS_AS(
      lm_forward(g2, speech2, bundle.token_ids, target_ids, bound2, model.handles, small), Error);
}

TEST_CASE("causality: logits before a perturbed position are unchanged") {
  TinyModel model(12);
  Rng rng(13);
  const int t_s = 6;
  const PromptBundle bundle = build_text_input(model.vocab, TaskKind::scoring, "cd ab");
  const std::vector<int> targets = model.vocab.tokenize("accuracy:8 fluency:6");

  auto logits_for = [&](const Mat<double>& speech, const std::vector<int>& target_ids) {
    Graph<double> g;
    const auto bound = bind_params(g, model.ps, {false, false, false});
    const auto sid = g.leaf(speech, false);
    const auto out = lm_forward(g, sid, bundle.token_ids, target_ids, bound, model.handles,
                                model.cfg);
    return g.val(out.logits);
  };

  for (int trial = 0; trial < 25; ++trial) {
    Mat<double> speech = random_mat(t_s, model.cfg.model_dim, rng, 0.5);
    const Mat<double> base = logits_for(speech, targets);

    // perturb a random speech row
    const int row = rng.uniform_int(0, t_s - 1);
    Mat<double> perturbed_speech = speech;
    for (int c = 0; c < perturbed_speech.cols(); ++c)
      perturbed_speech(row, c) += rng.uniform(0.5, 1.5);
    const Mat<double> after_speech = logits_for(perturbed_speech, targets);
    for (int r = 0; r < row; ++r)
      for (int c = 0; c < base.cols(); ++c) CHECK(after_speech(r, c) == base(r, c));

    // perturb a random target token
    const int j = rng.uniform_int(0, static_cast<int>(targets.size()) - 1);
    std::vector<int> perturbed_targets = targets;
    perturbed_targets[static_cast<size_t>(j)] =
        model.vocab.char_id(perturbed_targets[static_cast<size_t>(j)] == model.vocab.char_id('0')
                                ? '1'
                                : '0');
    const Mat<double> after_target = logits_for(speech, perturbed_targets);
    const int target_pos = t_s + static_cast<int>(bundle.token_ids.size()) + 1 + j;
    for (int r = 0; r < target_pos; ++r)
      for (int c = 0; c < base.cols(); ++c) CHECK(after_target(r, c) == base(r, c));
  }
}

TEST_CASE("greedy decode follows stubbed logits exactly") {
  const Vocabulary vocab;
  const std::string target = "accuracy:9 fluency:7";
  std::vector<int> script = vocab.tokenize(target);
  script.push_back(Vocabulary::eos);

  size_t step_idx = 0;
  auto logits_at = [&](size_t k) {
    std::vector<double> logits(static_cast<size_t>(vocab.size()), 0.0);
    logits[static_cast<size_t>(script[k])] = 10.0;
    return logits;
  };
  auto step = [&](int) { return logits_at(++step_idx); };

  for (const bool constrained : {false, true}) {
    step_idx = 0;
    const std::string out = greedy_decode<double>(vocab, logits_at(0), step, 64, constrained);
    CHECK(out == target);
  }
}

TEST_CASE("constrained decoding parses even from adversarial logits") {
  const Vocabulary vocab;
  Rng rng(77);
  for (int trial = 0; trial < 200; ++trial) {
    auto step = [&](int) {
      std::vector<double> logits(static_cast<size_t>(vocab.size()));
      for (auto& l : logits) l = rng.uniform(-5.0, 5.0);
      return logits;
    };
    const std::string out = greedy_decode<double>(vocab, step(0), step, 64, true);
    CHECK(parse_score(out).has_value());
  }
}

TEST_CASE("incremental decoder matches the graph forward") {
  TinyModel model(21);
  Rng rng(22);
  const int t_s = 5;
  Mat<double> speech = random_mat(t_s, model.cfg.model_dim, rng, 0.5);
  const PromptBundle bundle = build_text_input(model.vocab, TaskKind::scoring, "ba dc");
  const std::vector<int> targets = model.vocab.tokenize("accuracy:3");

  // graph path: full sequence, no EOS/loss (prefill semantics)
  std::vector<int> text_plus = bundle.token_ids;
  Graph<double> g;
  const auto bound = bind_params(g, model.ps, {false, false, false});
  const auto sid = g.leaf(speech, false);
  // assemble [speech; text; BOS; targets] exactly as generation does
  std::vector<int> ids = text_plus;
  ids.push_back(Vocabulary::bos);
  ids.insert(ids.end(), targets.begin(), targets.end());
  const auto tokens = g.embedding(bound[model.handles.tok_emb], ids);
  auto x = g.concat_rows({sid, tokens});
  const int L = g.val(x).rows();
  x = g.add(x, g.slice_rows(bound[model.handles.pos_emb], 0, L));
  for (const auto& blk : model.handles.blocks)
    x = transformer_block_forward(g, x, bound, blk, model.cfg.n_heads, true);
  x = g.layer_norm(x, bound[model.handles.ln_f.gamma], bound[model.handles.ln_f.beta]);
  const auto logits = g.matmul(x, bound[model.handles.head_w]);
  const Mat<double>& ref = g.val(logits);

  // incremental path
  LmDecoder<double> decoder(model.cfg, model.ps, model.handles);
  decoder.append(speech);
  const Mat<double>& emb = model.ps.value(model.handles.tok_emb);
  std::vector<double> last;
  for (int id : ids) {
    Mat<double> row(1, model.cfg.model_dim);
    std::memcpy(row.data(), emb.row(id), sizeof(double) * model.cfg.model_dim);
    last = decoder.append(row);
  }
  REQUIRE(static_cast<int>(last.size()) == ref.cols());
  for (int c = 0; c < ref.cols(); ++c)
    CHECK(last[static_cast<size_t>(c)] == doctest::Approx(ref(L - 1, c)).epsilon(1e-9));
}

TEST_CASE("generation is deterministic") {
  LMConfig cfg = tiny_lm();
  Vocabulary vocab;
  ParamSet<float> ps;
  const auto handles = make_lm_params(ps, cfg, vocab.size(), 31);
  Rng rng(32);
  Mat<float> speech(6, cfg.model_dim);
  fill_normal(speech, rng, 0.0, 0.5);
  const PromptBundle bundle = build_text_input(vocab, TaskKind::scoring, "ab");
  const std::string s1 = generate(speech, bundle, 24, true, cfg, ps, handles, vocab);
  const std::string s2 = generate(speech, bundle, 24, true, cfg, ps, handles, vocab);
  CHECK(s1 == s2);
  CHECK(parse_score(s1).has_value());
}
