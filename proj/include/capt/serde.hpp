#pragma once

#include <string>

#include "json.hpp"

#include "capt/adapter.hpp"
#include "capt/corpus.hpp"
#include "capt/decoder_lm.hpp"
#include "capt/speech_encoder.hpp"
#include "capt/trainer.hpp"

namespace capt {

using json = nlohmann::json;

// JSON conversions for the config structs. Readers accept partial objects and
// keep defaults for missing fields; unknown keys are rejected by the config
// validator (config.hpp), not here.

inline json to_json(const ConvSpec& spec) {
  json layers = json::array();
  for (const auto& l : spec.layers)
    layers.push_back({{"channels", l.channels}, {"kernel", l.kernel}, {"stride", l.stride}});
  return json{{"layers", layers}};
}

inline ConvSpec conv_spec_from_json(const json& j) {
  if (j.is_string()) return ConvSpec::preset(j.get<std::string>());
  ConvSpec spec;
  for (const auto& l : j.at("layers")) {
    spec.layers.push_back(
        {l.at("channels").get<int>(), l.at("kernel").get<int>(), l.at("stride").get<int>()});
  }
  return spec;
}

inline json to_json(const EncoderConfig& cfg) {
  return json{{"conv", to_json(cfg.conv)},
              {"n_transformer_layers", cfg.n_transformer_layers},
              {"model_dim", cfg.model_dim},
              {"n_heads", cfg.n_heads},
              {"ffn_dim", cfg.ffn_dim}};
}

inline EncoderConfig encoder_config_from_json(const json& j) {
  EncoderConfig cfg;
  if (j.contains("conv")) cfg.conv = conv_spec_from_json(j.at("conv"));
  cfg.n_transformer_layers = j.value("n_transformer_layers", cfg.n_transformer_layers);
  cfg.model_dim = j.value("model_dim", cfg.model_dim);
  cfg.n_heads = j.value("n_heads", cfg.n_heads);
  cfg.ffn_dim = j.value("ffn_dim", cfg.ffn_dim);
  return cfg;
}

inline json to_json(const AdapterConfig& cfg) {
  return json{{"pool_kernel", cfg.pool_kernel},
              {"pool_stride", cfg.pool_stride},
              {"n_heads", cfg.n_heads},
              {"in_dim", cfg.in_dim},
              {"out_dim", cfg.out_dim}};
}

inline AdapterConfig adapter_config_from_json(const json& j) {
  AdapterConfig cfg;
  cfg.pool_kernel = j.value("pool_kernel", cfg.pool_kernel);
  cfg.pool_stride = j.value("pool_stride", cfg.pool_stride);
  cfg.n_heads = j.value("n_heads", cfg.n_heads);
  cfg.in_dim = j.value("in_dim", cfg.in_dim);
  cfg.out_dim = j.value("out_dim", cfg.out_dim);
  return cfg;
}

inline json to_json(const LMConfig& cfg) {
  return json{{"n_layers", cfg.n_layers},
              {"model_dim", cfg.model_dim},
              {"n_heads", cfg.n_heads},
              {"ffn_dim", cfg.ffn_dim},
              {"max_seq_len", cfg.max_seq_len}};
}

inline LMConfig lm_config_from_json(const json& j) {
  LMConfig cfg;
  cfg.n_layers = j.value("n_layers", cfg.n_layers);
  cfg.model_dim = j.value("model_dim", cfg.model_dim);
  cfg.n_heads = j.value("n_heads", cfg.n_heads);
  cfg.ffn_dim = j.value("ffn_dim", cfg.ffn_dim);
  cfg.max_seq_len = j.value("max_seq_len", cfg.max_seq_len);
  return cfg;
}

inline json to_json(const PhonemeInventory& inv) {
  return json{{"symbols", inv.symbols},
              {"render_freq_hz", inv.render_freq_hz},
              {"base_duration_ms", inv.base_duration_ms}};
}

inline PhonemeInventory inventory_from_json(const json& j) {
  PhonemeInventory inv;
  inv.symbols = j.at("symbols").get<std::string>();
  inv.render_freq_hz = j.at("render_freq_hz").get<std::vector<double>>();
  inv.base_duration_ms = j.at("base_duration_ms").get<std::vector<double>>();
  return inv;
}

inline json to_json(const CorpusConfig& cfg) {
  return json{{"n_train", cfg.n_train},
              {"n_test", cfg.n_test},
              {"seed", cfg.seed},
              {"sample_rate", cfg.sample_rate},
              {"inventory", to_json(cfg.inventory)},
              {"prompt_len_min", cfg.prompt_len_min},
              {"prompt_len_max", cfg.prompt_len_max},
              {"max_substitution_prob", cfg.max_substitution_prob},
              {"max_pause_prob", cfg.max_pause_prob},
              {"max_tempo_jitter", cfg.max_tempo_jitter},
              {"pause_ms_min", cfg.pause_ms_min},
              {"pause_ms_max", cfg.pause_ms_max},
              {"corruption_coupling", cfg.corruption_coupling}};
}

inline CorpusConfig corpus_config_from_json(const json& j) {
  CorpusConfig cfg;
  cfg.n_train = j.value("n_train", cfg.n_train);
  cfg.n_test = j.value("n_test", cfg.n_test);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.sample_rate = j.value("sample_rate", cfg.sample_rate);
  if (j.contains("inventory")) cfg.inventory = inventory_from_json(j.at("inventory"));
  cfg.prompt_len_min = j.value("prompt_len_min", cfg.prompt_len_min);
  cfg.prompt_len_max = j.value("prompt_len_max", cfg.prompt_len_max);
  cfg.max_substitution_prob = j.value("max_substitution_prob", cfg.max_substitution_prob);
  cfg.max_pause_prob = j.value("max_pause_prob", cfg.max_pause_prob);
  cfg.max_tempo_jitter = j.value("max_tempo_jitter", cfg.max_tempo_jitter);
  cfg.pause_ms_min = j.value("pause_ms_min", cfg.pause_ms_min);
  cfg.pause_ms_max = j.value("pause_ms_max", cfg.pause_ms_max);
  cfg.corruption_coupling = j.value("corruption_coupling", cfg.corruption_coupling);
  return cfg;
}

inline json to_json(const TrainConfig& cfg) {
  return json{{"stage", cfg.stage},
              {"epochs", cfg.epochs},
              {"learning_rate", cfg.learning_rate},
              {"batch_size", cfg.batch_size},
              {"seed", cfg.seed},
              {"use_prompt_text", cfg.use_prompt_text},
              {"init_from", cfg.init_from},
              {"threads", cfg.threads},
              {"weight_decay", cfg.weight_decay},
              {"grad_clip", cfg.grad_clip},
              {"adam_beta1", cfg.adam_beta1},
              {"adam_beta2", cfg.adam_beta2},
              {"adam_eps", cfg.adam_eps}};
}

inline TrainConfig train_config_from_json(const json& j, int stage_default = 1) {
  TrainConfig cfg = TrainConfig::toy_defaults(j.value("stage", stage_default));
  cfg.epochs = j.value("epochs", cfg.epochs);
  cfg.learning_rate = j.value("learning_rate", cfg.learning_rate);
  cfg.batch_size = j.value("batch_size", cfg.batch_size);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.use_prompt_text = j.value("use_prompt_text", cfg.use_prompt_text);
  cfg.init_from = j.value("init_from", cfg.init_from);
  cfg.threads = j.value("threads", cfg.threads);
  cfg.weight_decay = j.value("weight_decay", cfg.weight_decay);
  cfg.grad_clip = j.value("grad_clip", cfg.grad_clip);
  cfg.adam_beta1 = j.value("adam_beta1", cfg.adam_beta1);
  cfg.adam_beta2 = j.value("adam_beta2", cfg.adam_beta2);
  cfg.adam_eps = j.value("adam_eps", cfg.adam_eps);
  return cfg;
}

}  // namespace capt
