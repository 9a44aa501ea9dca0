#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "capt/edit_distance.hpp"
#include "capt/error.hpp"
#include "capt/io.hpp"
#include "capt/rng.hpp"

namespace capt {

// Each symbol renders as a fixed-frequency sinusoid, so content is trivially
// separable and a small encoder can learn to transcribe it.
struct PhonemeInventory {
  std::string symbols;                    // distinct single-character tokens
  std::vector<double> render_freq_hz;     // per symbol
  std::vector<double> base_duration_ms;   // per symbol

  static PhonemeInventory default_inventory(int n_symbols = 20) {
    PhonemeInventory inv;
    for (int i = 0; i < n_symbols; ++i) {
      inv.symbols.push_back(static_cast<char>('a' + i));
      inv.render_freq_hz.push_back(120.0 + 36.0 * i);
      inv.base_duration_ms.push_back(140.0);
    }
    return inv;
  }

  int size() const { return static_cast<int>(symbols.size()); }

  int index_of(char symbol) const {
    const size_t pos = symbols.find(symbol);
    require(pos != std::string::npos, errc::invalid_argument,
            std::string("unknown symbol: '") + symbol + "'");
    return static_cast<int>(pos);
  }

  void validate(int sample_rate) const {
    require(!symbols.empty(), errc::config_invalid, "inventory: no symbols");
    require(render_freq_hz.size() == symbols.size() &&
                base_duration_ms.size() == symbols.size(),
            errc::config_invalid, "inventory: per-symbol arrays must match symbol count");
    for (size_t i = 0; i < symbols.size(); ++i) {
      require(symbols.find(symbols[i], i + 1) == std::string::npos, errc::config_invalid,
              "inventory: duplicate symbol");
      require(render_freq_hz[i] > 0.0 && render_freq_hz[i] < sample_rate / 2.0,
              errc::frequency_above_nyquist,
              "inventory: render frequency must be below Nyquist");
      require(base_duration_ms[i] > 0.0, errc::config_invalid, "inventory: bad duration");
    }
  }
};

struct UtteranceSpec {
  std::string prompt_tokens;       // one char per symbol
  double substitution_prob = 0.0;
  double pause_insertion_prob = 0.0;
  double pause_duration_ms = 200.0;
  double tempo_jitter = 0.0;       // std-dev multiplier on token durations
  uint64_t seed = 0;

  void validate() const {
    require(!prompt_tokens.empty(), errc::empty_prompt, "utterance spec: empty prompt");
    require(substitution_prob >= 0.0 && substitution_prob <= 1.0, errc::config_invalid,
            "utterance spec: substitution_prob outside [0,1]");
    require(pause_insertion_prob >= 0.0 && pause_insertion_prob <= 1.0, errc::config_invalid,
            "utterance spec: pause_insertion_prob outside [0,1]");
    require(pause_duration_ms > 0.0, errc::config_invalid, "utterance spec: bad pause duration");
    require(tempo_jitter >= 0.0, errc::config_invalid, "utterance spec: negative tempo jitter");
  }
};

struct Utterance {
  std::string id;
  std::vector<float> samples;
  int sample_rate = 0;
  std::string spoken_tokens;  // symbols actually rendered, one char each
  std::string prompt_tokens;
  int accuracy = 0;
  int fluency = 0;

  std::string spoken_text() const { return spaced(spoken_tokens); }
  std::string prompt_text() const { return spaced(prompt_tokens); }

  static std::string spaced(const std::string& tokens) {
    std::string out;
    for (size_t i = 0; i < tokens.size(); ++i) {
      if (i) out.push_back(' ');
      out.push_back(tokens[i]);
    }
    return out;
  }

  static std::string unspaced(const std::string& text) {
    std::string tokens;
    for (size_t i = 0; i < text.size(); ++i) {
      if (i % 2 == 0) {
        require(text[i] != ' ', errc::manifest_parse, "token text: expected symbol, got space");
        tokens.push_back(text[i]);
      } else {
        require(text[i] == ' ', errc::manifest_parse, "token text: expected single-char tokens");
      }
    }
    return tokens;
  }
};

// Token error rate: edit distance over symbols divided by prompt length,
// clamped to [0, 1].
inline double token_error_rate(const std::string& prompt, const std::string& spoken) {
  require(!prompt.empty(), errc::empty_prompt, "token_error_rate: empty prompt");
  const double ter = static_cast<double>(edit_distance(prompt, spoken).distance) /
                     static_cast<double>(prompt.size());
  return std::min(1.0, ter);
}

inline int accuracy_label(const std::string& prompt, const std::string& spoken) {
  return static_cast<int>(std::lround(10.0 * (1.0 - token_error_rate(prompt, spoken))));
}

// fluency = round(10 * (1 - clamp(2*pause_ratio + jitter_cv, 0, 1))).
inline int fluency_label(double pause_ratio, double jitter_cv) {
  const double disruption = std::clamp(2.0 * pause_ratio + jitter_cv, 0.0, 1.0);
  return static_cast<int>(std::lround(10.0 * (1.0 - disruption)));
}

// Deterministic synthesis: substitutions, tempo jitter and pauses are drawn
// from spec.seed in a fixed order; labels are computed from the realized
// sequence and timing, not from the probabilities.
inline Utterance render_utterance(const UtteranceSpec& spec, const PhonemeInventory& inventory,
                                  int sample_rate) {
  spec.validate();
  inventory.validate(sample_rate);
  for (char c : spec.prompt_tokens) inventory.index_of(c);

  Rng rng(spec.seed);
  const int n = static_cast<int>(spec.prompt_tokens.size());

  // 1) per-token substitution (always to a different symbol)
  std::string spoken = spec.prompt_tokens;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    if (u < spec.substitution_prob && inventory.size() > 1) {
      const int orig = inventory.index_of(spec.prompt_tokens[static_cast<size_t>(i)]);
      int pick = rng.uniform_int(0, inventory.size() - 2);
      if (pick >= orig) ++pick;
      spoken[static_cast<size_t>(i)] = inventory.symbols[static_cast<size_t>(pick)];
    }
  }

  // 2) per-token duration jitter
  std::vector<int> durations(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double factor = std::clamp(1.0 + spec.tempo_jitter * rng.normal(), 0.25, 4.0);
    const int sym = inventory.index_of(spoken[static_cast<size_t>(i)]);
    const double ms = inventory.base_duration_ms[static_cast<size_t>(sym)] * factor;
    durations[static_cast<size_t>(i)] =
        std::max(2, static_cast<int>(std::lround(ms * sample_rate / 1000.0)));
  }

  // 3) pauses between tokens
  std::vector<int> pauses(static_cast<size_t>(n), 0);  // pause before token i (i >= 1)
  const int pause_samples =
      std::max(1, static_cast<int>(std::lround(spec.pause_duration_ms * sample_rate / 1000.0)));
  for (int i = 1; i < n; ++i) {
    if (rng.uniform() < spec.pause_insertion_prob) pauses[static_cast<size_t>(i)] = pause_samples;
  }

  Utterance utt;
  utt.sample_rate = sample_rate;
  utt.prompt_tokens = spec.prompt_tokens;
  utt.spoken_tokens = spoken;

  int total = 0, silence = 0;
  for (int i = 0; i < n; ++i) total += durations[static_cast<size_t>(i)] + pauses[static_cast<size_t>(i)];
  utt.samples.reserve(static_cast<size_t>(total));
  const int fade = std::max(1, static_cast<int>(std::lround(0.005 * sample_rate)));
  for (int i = 0; i < n; ++i) {
    for (int s = 0; s < pauses[static_cast<size_t>(i)]; ++s) utt.samples.push_back(0.0f);
    silence += pauses[static_cast<size_t>(i)];
    const int sym = inventory.index_of(spoken[static_cast<size_t>(i)]);
    const double freq = inventory.render_freq_hz[static_cast<size_t>(sym)];
    const int len = durations[static_cast<size_t>(i)];
    const int ramp = std::min(fade, len / 2);
    for (int s = 0; s < len; ++s) {
      double amp = 0.8;
      if (ramp > 0) {
        if (s < ramp) amp *= static_cast<double>(s + 1) / (ramp + 1);
        if (len - 1 - s < ramp) amp *= static_cast<double>(len - s) / (ramp + 1);
      }
      const double t = static_cast<double>(s) / sample_rate;
      utt.samples.push_back(static_cast<float>(amp * std::sin(6.283185307179586 * freq * t)));
    }
  }

  // labels from the realized utterance
  utt.accuracy = accuracy_label(utt.prompt_tokens, utt.spoken_tokens);
  double mean = 0.0;
  for (int d : durations) mean += d;
  mean /= n;
  double var = 0.0;
  for (int d : durations) var += (d - mean) * (d - mean);
  var /= n;
  const double jitter_cv = std::sqrt(var) / mean;
  const double pause_ratio = total > 0 ? static_cast<double>(silence) / total : 0.0;
  utt.fluency = fluency_label(pause_ratio, jitter_cv);
  return utt;
}

// ---- corpus generation ----

struct CorpusConfig {
  int n_train = 500;
  int n_test = 200;
  uint64_t seed = 42;
  int sample_rate = 2000;
  PhonemeInventory inventory = PhonemeInventory::default_inventory();
  int prompt_len_min = 6;
  int prompt_len_max = 10;
  // Per-utterance corruption levels; severity is shared across the three
  // channels with weight `corruption_coupling`, so disfluency correlates with
  // mispronunciation the way it does for real learners.
  double max_substitution_prob = 0.5;
  double max_pause_prob = 0.4;
  double max_tempo_jitter = 0.4;
  double pause_ms_min = 100.0;
  double pause_ms_max = 300.0;
  double corruption_coupling = 0.75;

  void validate() const {
    require(n_train >= 0 && n_test >= 0 && n_train + n_test >= 1, errc::config_invalid,
            "corpus: needs at least one utterance");
    require(sample_rate >= 100, errc::config_invalid, "corpus: bad sample rate");
    inventory.validate(sample_rate);
    require(prompt_len_min >= 1 && prompt_len_max >= prompt_len_min, errc::config_invalid,
            "corpus: bad prompt length range");
    require(max_substitution_prob >= 0.0 && max_substitution_prob <= 1.0 &&
                max_pause_prob >= 0.0 && max_pause_prob <= 1.0 && max_tempo_jitter >= 0.0,
            errc::config_invalid, "corpus: corruption bounds out of range");
    require(pause_ms_min > 0.0 && pause_ms_max >= pause_ms_min, errc::config_invalid,
            "corpus: bad pause duration range");
    require(corruption_coupling >= 0.0 && corruption_coupling <= 1.0, errc::config_invalid,
            "corpus: coupling outside [0,1]");
  }
};

// Specs are derived per utterance from hash(seed, global index), so any
// utterance can be regenerated independently.
inline UtteranceSpec draw_utterance_spec(const CorpusConfig& cfg, int global_index) {
  const uint64_t seed = mix_seed(cfg.seed, static_cast<uint64_t>(global_index));
  Rng rng(mix_seed(seed, fnv1a64("spec")));
  UtteranceSpec spec;
  const int len = rng.uniform_int(cfg.prompt_len_min, cfg.prompt_len_max);
  for (int i = 0; i < len; ++i) {
    spec.prompt_tokens.push_back(
        cfg.inventory.symbols[static_cast<size_t>(rng.uniform_int(0, cfg.inventory.size() - 1))]);
  }
  const double severity = rng.uniform();
  auto level = [&](double independent) {
    return std::clamp(cfg.corruption_coupling * severity +
                          (1.0 - cfg.corruption_coupling) * independent,
                      0.0, 1.0);
  };
  const double ls = level(rng.uniform());
  const double lp = level(rng.uniform());
  const double lj = level(rng.uniform());
  spec.substitution_prob = cfg.max_substitution_prob * ls * ls;
  spec.pause_insertion_prob = cfg.max_pause_prob * lp * lp;
  spec.tempo_jitter = cfg.max_tempo_jitter * lj * lj;
  spec.pause_duration_ms = rng.uniform(cfg.pause_ms_min, cfg.pause_ms_max);
  spec.seed = mix_seed(seed, fnv1a64("render"));
  return spec;
}

namespace detail {

inline std::string json_escape(const std::string& s) {
  std::string out;
  out.reserve(s.size() + 2);
  for (char c : s) {
    switch (c) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\r': out += "\\r"; break;
      case '\t': out += "\\t"; break;
      default:
        if (static_cast<unsigned char>(c) < 0x20) {
          char buf[8];
          std::snprintf(buf, sizeof(buf), "\\u%04x", c);
          out += buf;
        } else {
          out.push_back(c);
        }
    }
  }
  return out;
}

}  // namespace detail

inline std::string manifest_line(const Utterance& utt, const std::string& audio_path) {
  std::ostringstream os;
  os << "{\"id\":\"" << detail::json_escape(utt.id) << "\""
     << ",\"audio_path\":\"" << detail::json_escape(audio_path) << "\""
     << ",\"sample_rate\":" << utt.sample_rate
     << ",\"spoken_text\":\"" << detail::json_escape(utt.spoken_text()) << "\""
     << ",\"prompt_text\":\"" << detail::json_escape(utt.prompt_text()) << "\""
     << ",\"accuracy\":" << utt.accuracy
     << ",\"fluency\":" << utt.fluency << "}";
  return os.str();
}

// Writes audio files plus a manifest for one split. Returns the manifest text.
inline std::string write_split(const std::vector<Utterance>& utts,
                               const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir / "audio");
  std::string manifest;
  for (const Utterance& utt : utts) {
    const std::string rel = "audio/" + utt.id + ".f32le";
    write_f32le(out_dir / rel, utt.samples);
    manifest += manifest_line(utt, rel);
    manifest += '\n';
  }
  return manifest;
}

struct GeneratedCorpus {
  std::filesystem::path train_manifest;
  std::filesystem::path test_manifest;
  int n_train = 0;
  int n_test = 0;
};

inline GeneratedCorpus generate_corpus(const CorpusConfig& cfg,
                                       const std::filesystem::path& out_dir, bool force = false) {
  namespace fs = std::filesystem;
  cfg.validate();
  if (fs::exists(out_dir) && !fs::is_empty(out_dir)) {
    require(force, errc::output_dir_not_empty,
            "output directory exists and is not empty (use force): " + out_dir.string());
  }
  fs::create_directories(out_dir);

  auto make_split = [&](const std::string& name, int count, int index_offset) {
    std::vector<Utterance> utts;
    utts.reserve(static_cast<size_t>(count));
    for (int i = 0; i < count; ++i) {
      const UtteranceSpec spec = draw_utterance_spec(cfg, index_offset + i);
      Utterance utt = render_utterance(spec, cfg.inventory, cfg.sample_rate);
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%s-%05d", name.c_str(), i);
      utt.id = buf;
      utts.push_back(std::move(utt));
    }
    const std::string manifest = write_split(utts, out_dir);
    write_file_atomic(out_dir / (name + ".jsonl"), manifest);
    return utts.size();
  };

  GeneratedCorpus result;
  result.n_train = static_cast<int>(make_split("train", cfg.n_train, 0));
  result.n_test = static_cast<int>(make_split("test", cfg.n_test, cfg.n_train));
  result.train_manifest = out_dir / "train.jsonl";
  result.test_manifest = out_dir / "test.jsonl";
  return result;
}

inline std::vector<Utterance> load_manifest(const std::filesystem::path& manifest_path) {
  namespace fs = std::filesystem;
  require(fs::exists(manifest_path), errc::io_failure,
          "manifest not found: " + manifest_path.string());
  const fs::path base = manifest_path.parent_path();
  std::ifstream in(manifest_path);
  require(in.good(), errc::io_failure, "cannot open " + manifest_path.string());

  std::vector<Utterance> utts;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = manifest_path.filename().string() + " line " + std::to_string(line_no);
    nlohmann::json rec = nlohmann::json::parse(line, nullptr, false);
    require(!rec.is_discarded() && rec.is_object(), errc::manifest_parse,
            where + ": malformed JSON record");
    try {
      Utterance utt;
      utt.id = rec.at("id").get<std::string>();
      const std::string audio_rel = rec.at("audio_path").get<std::string>();
      utt.sample_rate = rec.at("sample_rate").get<int>();
      utt.spoken_tokens = Utterance::unspaced(rec.at("spoken_text").get<std::string>());
      utt.prompt_tokens = Utterance::unspaced(rec.at("prompt_text").get<std::string>());
      utt.accuracy = rec.at("accuracy").get<int>();
      utt.fluency = rec.at("fluency").get<int>();
      require(!utt.spoken_tokens.empty() && !utt.prompt_tokens.empty(), errc::manifest_parse,
              "empty token sequence");
      require(utt.accuracy >= 0 && utt.accuracy <= 10, errc::score_out_of_range,
              "accuracy out of range: " + std::to_string(utt.accuracy));
      require(utt.fluency >= 0 && utt.fluency <= 10, errc::score_out_of_range,
              "fluency out of range: " + std::to_string(utt.fluency));
      require(utt.sample_rate >= 100, errc::manifest_parse, "bad sample_rate");
      const fs::path audio_path = base / audio_rel;
      require(fs::exists(audio_path), errc::manifest_missing_audio,
              "audio file missing: " + audio_path.string());
      utt.samples = read_f32le(audio_path);
      for (float s : utt.samples)
        require(std::isfinite(s), errc::non_finite_input, "non-finite audio sample");
      utts.push_back(std::move(utt));
    } catch (const Error& e) {
      throw Error(e.code(), where + " (id " +
                                (rec.contains("id") && rec["id"].is_string()
                                     ? rec["id"].get<std::string>()
                                     : std::string("?")) +
                                "): " + e.what());
    } catch (const nlohmann::json::exception& e) {
      throw Error(errc::manifest_parse, where + ": " + e.what());
    }
  }
  return utts;
}

}  // namespace capt
