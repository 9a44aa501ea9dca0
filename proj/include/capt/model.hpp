#pragma once

#include <array>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "capt/adapter.hpp"
#include "capt/corpus.hpp"
#include "capt/decoder_lm.hpp"
#include "capt/error.hpp"
#include "capt/speech_encoder.hpp"
#include "capt/text.hpp"

namespace capt {

enum class StageProvenance { none, stage1, stage2 };

inline const char* stage_provenance_name(StageProvenance p) {
  switch (p) {
    case StageProvenance::none: return "none";
    case StageProvenance::stage1: return "stage1";
    case StageProvenance::stage2: return "stage2";
  }
  return "?";
}

inline StageProvenance stage_provenance_from_name(const std::string& s) {
  if (s == "none") return StageProvenance::none;
  if (s == "stage1") return StageProvenance::stage1;
  if (s == "stage2") return StageProvenance::stage2;
  throw Error(errc::checkpoint_format, "unknown stage provenance: " + s);
}

// Frozen-group flags indexed by ParamGroup; the LM is frozen in both stages.
using FreezeFlags = std::array<bool, 3>;

inline FreezeFlags freeze_mask(int stage) {
  require(stage == 1 || stage == 2, errc::invalid_stage,
          "freeze_mask: stage must be 1 or 2, got " + std::to_string(stage));
  FreezeFlags frozen{};
  frozen[static_cast<size_t>(ParamGroup::encoder)] = false;
  frozen[static_cast<size_t>(ParamGroup::adapter)] = false;
  frozen[static_cast<size_t>(ParamGroup::lm)] = true;
  return frozen;
}

inline std::array<bool, 3> trainable_from_frozen(const FreezeFlags& frozen) {
  return {!frozen[0], !frozen[1], !frozen[2]};
}

// Full model: parameter store, module handles, configs and provenance.
template <typename T>
struct ModelState {
  EncoderConfig encoder_config;
  AdapterConfig adapter_config;
  LMConfig lm_config;
  Vocabulary vocab;
  ParamSet<T> params;
  EncoderHandles<T> encoder;
  AdapterHandles<T> adapter;
  LmHandles<T> lm;
  FreezeFlags freeze_flags = freeze_mask(1);
  uint64_t seed = 0;
  StageProvenance provenance = StageProvenance::none;
  bool init_from_stage1 = false;
};

inline void validate_dimension_chain(const EncoderConfig& enc, const AdapterConfig& adap,
                                     const LMConfig& lm) {
  enc.validate();
  adap.validate();
  lm.validate();
  require(enc.model_dim == adap.in_dim, errc::config_invalid,
          "adapter.in_dim must equal encoder model_dim");
  require(adap.out_dim == lm.model_dim, errc::config_invalid,
          "adapter.out_dim must equal lm model_dim");
}

template <typename T>
ModelState<T> init_model_state(const EncoderConfig& enc, const AdapterConfig& adap,
                               const LMConfig& lm, uint64_t seed) {
  validate_dimension_chain(enc, adap, lm);
  ModelState<T> state;
  state.encoder_config = enc;
  state.adapter_config = adap;
  state.lm_config = lm;
  state.seed = seed;
  state.encoder = make_encoder_params(state.params, enc, seed);
  state.adapter = make_adapter_params(state.params, adap, seed);
  state.lm = make_lm_params(state.params, lm, state.vocab.size(), seed);
  return state;
}

// Training targets: stage 1 transcribes the spoken text behind the ASR
// prefix; stage 2 predicts the score string behind the assessment prefix,
// with the prompt text included iff prompt conditioning is on.
inline std::pair<PromptBundle, std::string> make_target(const Vocabulary& vocab, int stage,
                                                        const Utterance& utt,
                                                        bool use_prompt_text) {
  require(stage == 1 || stage == 2, errc::invalid_stage,
          "make_target: stage must be 1 or 2, got " + std::to_string(stage));
  if (stage == 1) {
    return {build_text_input(vocab, TaskKind::asr, std::nullopt), utt.spoken_text()};
  }
  const std::optional<std::string> prompt =
      use_prompt_text ? std::optional<std::string>(utt.prompt_text()) : std::nullopt;
  return {build_text_input(vocab, TaskKind::scoring, prompt),
          format_score({utt.accuracy, utt.fluency})};
}

// One utterance's end-to-end loss graph. The waveform matrix is owned here so
// the graph's external leaf stays valid for the object's lifetime.
template <typename T>
struct SampleGraph {
  Mat<T> waveform;
  Graph<T> graph;
  BoundParams<T> bound;
  LmForward<T> lm_out;

  double loss() const { return static_cast<double>(graph.val(lm_out.loss)(0, 0)); }
};

template <typename T>
Mat<T> waveform_matrix(const Utterance& utt) {
  Mat<T> wave(static_cast<int>(utt.samples.size()), 1);
  for (size_t i = 0; i < utt.samples.size(); ++i) {
    require(std::isfinite(static_cast<double>(utt.samples[i])), errc::non_finite_input,
            "waveform: non-finite sample in " + utt.id);
    wave.data()[i] = static_cast<T>(utt.samples[i]);
  }
  return wave;
}

// Builds encoder -> adapter -> LM with the target loss attached.
template <typename T>
std::unique_ptr<SampleGraph<T>> build_sample_graph(const ModelState<T>& state, int stage,
                                                   const Utterance& utt, bool use_prompt_text,
                                                   const std::array<bool, 3>& trainable) {
  auto sample = std::make_unique<SampleGraph<T>>();
  sample->waveform = waveform_matrix<T>(utt);
  Graph<T>& g = sample->graph;
  sample->bound = bind_params(g, state.params, trainable);
  const auto wave_id = g.leaf(sample->waveform, false, "waveform");
  const auto h_s = encoder_forward(g, wave_id, sample->bound, state.encoder, state.encoder_config);
  const auto h_s_adapted =
      adapter_forward(g, h_s, sample->bound, state.adapter, state.adapter_config);
  const auto [bundle, target] = make_target(state.vocab, stage, utt, use_prompt_text);
  const std::vector<int> target_ids = state.vocab.tokenize(target);
  sample->lm_out = lm_forward(g, h_s_adapted, bundle.token_ids, target_ids, sample->bound,
                              state.lm, state.lm_config);
  return sample;
}

// Encoder + adapter inference: the LM-space features h'_s for one utterance.
template <typename T>
Mat<T> adapted_features(const ModelState<T>& state, const Utterance& utt) {
  Mat<T> wave = waveform_matrix<T>(utt);
  Graph<T> g;
  const auto bound = bind_params(g, state.params, {false, false, false});
  const auto wave_id = g.leaf(wave, false, "waveform");
  const auto h_s = encoder_forward(g, wave_id, bound, state.encoder, state.encoder_config);
  const auto out = adapter_forward(g, h_s, bound, state.adapter, state.adapter_config);
  return g.val(out);
}

// Greedy transcription (unconstrained decoding behind the ASR prefix).
template <typename T>
std::string transcribe(const ModelState<T>& state, const Utterance& utt, int max_new_tokens) {
  const Mat<T> features = adapted_features(state, utt);
  const PromptBundle bundle = build_text_input(state.vocab, TaskKind::asr, std::nullopt);
  return generate(features, bundle, max_new_tokens, /*constrained=*/false, state.lm_config,
                  state.params, state.lm, state.vocab);
}

// Greedy score prediction (grammar-constrained by default).
template <typename T>
std::string predict_score_string(const ModelState<T>& state, const Utterance& utt,
                                 bool use_prompt_text, bool constrained = true) {
  const Mat<T> features = adapted_features(state, utt);
  const std::optional<std::string> prompt =
      use_prompt_text ? std::optional<std::string>(utt.prompt_text()) : std::nullopt;
  const PromptBundle bundle = build_text_input(state.vocab, TaskKind::scoring, prompt);
  // "accuracy:10 fluency:10" plus EOS fits comfortably in 24 tokens.
  return generate(features, bundle, /*max_new_tokens=*/24, constrained, state.lm_config,
                  state.params, state.lm, state.vocab);
}

}  // namespace capt
