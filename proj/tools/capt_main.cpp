// capt — align-free pronunciation assessment pipeline (synthetic, desk scale).
//
// Subcommands: gen-corpus, train, evaluate, ablate, infer. Every artifact-
// producing run writes its resolved configuration into the run directory so
// the run can be reproduced bit for bit.

#include <cstdio>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "capt/ablation.hpp"
#include "capt/checkpoint.hpp"
#include "capt/config.hpp"
#include "capt/eval.hpp"
#include "capt/trainer.hpp"

namespace fs = std::filesystem;
using capt::json;

namespace {

fs::path run_root() {
  if (const char* env = std::getenv("CAPT_RUN_ROOT")) return fs::path(env);
  return fs::path("runs");
}

std::string utc_timestamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y%m%dT%H%M%SZ", &tm);
  return buf;
}

std::string short_hash(const json& resolved) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(capt::fnv1a64(resolved.dump())));
  return std::string(buf).substr(0, 8);
}

// <run_root>/<command>-<confighash8>-<timestamp>, holding resolved_config.json.
fs::path make_run_dir(const std::string& command, const json& resolved,
                      const std::string& out_override) {
  fs::path dir = out_override.empty()
                     ? run_root() / (command + "-" + short_hash(resolved) + "-" + utc_timestamp())
                     : fs::path(out_override);
  fs::create_directories(dir);
  capt::write_file_atomic(dir / "resolved_config.json", resolved.dump(2) + "\n");
  return dir;
}

capt::RunConfig load_config_or_preset(const std::string& config_path, const std::string& preset) {
  capt::RunConfig cfg =
      config_path.empty() ? capt::preset_run_config(preset) : capt::load_run_config(config_path);
  cfg.validate();
  return cfg;
}

std::vector<uint64_t> parse_seed_list(const std::string& csv) {
  std::vector<uint64_t> seeds;
  std::string token;
  for (char c : csv + ",") {
    if (c == ',') {
      if (!token.empty()) seeds.push_back(std::stoull(token));
      token.clear();
    } else {
      token.push_back(c);
    }
  }
  capt::require(!seeds.empty(), capt::errc::invalid_argument, "no seeds given");
  return seeds;
}

std::string loss_log_csv(const std::vector<capt::EpochLoss>& log) {
  std::string csv = "epoch,split,loss\n";
  char buf[64];
  for (const auto& row : log) {
    std::snprintf(buf, sizeof(buf), "%d,%s,%.6f\n", row.epoch, row.split.c_str(), row.loss);
    csv += buf;
  }
  return csv;
}

json asr_report_json(const capt::AsrReport& r) {
  return json{{"wer", r.wer},
              {"n_utterances", r.n_utterances},
              {"substitutions", r.substitutions},
              {"deletions", r.deletions},
              {"insertions", r.insertions},
              {"ref_words", r.ref_words}};
}

json scoring_report_json(const capt::ScoringReport& r) {
  return json{{"pcc_accuracy", r.pcc_accuracy},
              {"pcc_fluency", r.pcc_fluency},
              {"parse_failure_rate", r.parse_failure_rate},
              {"n_valid", r.n_valid},
              {"n_utterances", r.n_utterances}};
}

int cmd_gen_corpus(const std::string& config_path, const std::string& preset,
                   const std::string& out, bool force) {
  const capt::RunConfig cfg = load_config_or_preset(config_path, preset);
  const json resolved = capt::to_json(cfg.corpus);
  const fs::path dir =
      out.empty() ? run_root() / ("corpus-" + short_hash(resolved)) : fs::path(out);
  const auto result = capt::generate_corpus(cfg.corpus, dir, force);
  capt::write_file_atomic(dir / "corpus_config.json", resolved.dump(2) + "\n");
  std::printf("corpus: %d train / %d test utterances\n", result.n_train, result.n_test);
  std::printf("train manifest: %s\n", result.train_manifest.string().c_str());
  std::printf("test manifest:  %s\n", result.test_manifest.string().c_str());
  return 0;
}

int cmd_train(int stage, const std::string& config_path, const std::string& preset,
              const std::string& corpus_dir, const std::string& init_from, const std::string& out,
              int threads) {
  capt::RunConfig cfg = load_config_or_preset(config_path, preset);
  capt::TrainConfig tcfg = stage == 1 ? cfg.train_stage1 : cfg.train_stage2;
  tcfg.stage = stage;
  if (!init_from.empty()) tcfg.init_from = init_from;
  if (threads > 0) tcfg.threads = threads;
  if (tcfg.threads == 0) tcfg.threads = cfg.threads;
  tcfg.validate();

  json resolved = capt::to_json(cfg);
  resolved[stage == 1 ? "train_stage1" : "train_stage2"] = capt::to_json(tcfg);
  resolved["command"] = {{"name", "train"}, {"stage", stage}, {"corpus", corpus_dir}};
  const fs::path dir = make_run_dir("train" + std::to_string(stage), resolved, out);

  const auto data = capt::load_manifest(fs::path(corpus_dir) / "train.jsonl");
  capt::ModelState<float> init =
      tcfg.init_from.empty()
          ? capt::init_model_state<float>(cfg.encoder, cfg.adapter, cfg.lm, tcfg.seed)
          : capt::load_checkpoint<float>(tcfg.init_from);

  std::printf("training stage %d: %zu utterances, %d epochs, run dir %s\n", stage, data.size(),
              tcfg.epochs, dir.string().c_str());
  const auto result = capt::train_stage(tcfg, data, std::move(init));

  const fs::path ckpt = dir / ("stage" + std::to_string(stage) + ".ckpt");
  capt::save_checkpoint(ckpt, result.state);
  capt::write_file_atomic(dir / "loss_log.csv", loss_log_csv(result.log));
  std::printf("final train loss: %.6f\n", result.log.back().loss);
  std::printf("checkpoint: %s\n", ckpt.string().c_str());
  return 0;
}

int cmd_evaluate(const std::string& task, const std::string& checkpoint,
                 const std::string& corpus_dir, bool no_prompt_text, const std::string& out,
                 int threads) {
  capt::require(task == "asr" || task == "scoring", capt::errc::invalid_argument,
                "task must be asr or scoring");
  const json resolved = {{"command", "evaluate"},
                         {"task", task},
                         {"checkpoint", checkpoint},
                         {"corpus", corpus_dir},
                         {"use_prompt_text", !no_prompt_text},
                         {"threads", threads}};
  const fs::path dir = make_run_dir("evaluate-" + task, resolved, out);

  const auto state = capt::load_checkpoint<float>(checkpoint);
  const auto test_set = capt::load_manifest(fs::path(corpus_dir) / "test.jsonl");

  if (task == "asr") {
    std::vector<capt::AsrUtteranceRow> rows;
    const capt::AsrReport report = capt::evaluate_asr(state, test_set, &rows, threads);
    capt::write_file_atomic(dir / "asr_report.json", asr_report_json(report).dump(2) + "\n");
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "WER %.4f over %d utterances (S=%d D=%d I=%d, %d reference words)\n",
                  report.wer, report.n_utterances, report.substitutions, report.deletions,
                  report.insertions, report.ref_words);
    capt::write_file_atomic(dir / "asr_report.txt", buf);
    capt::write_file_atomic(dir / "utterances.csv", capt::asr_rows_csv(rows));
    std::printf("%s", buf);
  } else {
    std::vector<capt::ScoringUtteranceRow> rows;
    const capt::ScoringReport report =
        capt::evaluate_scoring(state, test_set, !no_prompt_text, &rows, threads);
    capt::write_file_atomic(dir / "scoring_report.json",
                            scoring_report_json(report).dump(2) + "\n");
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "PCC accuracy %.4f, fluency %.4f (%d/%d parsed, failure rate %.4f)\n",
                  report.pcc_accuracy, report.pcc_fluency, report.n_valid, report.n_utterances,
                  report.parse_failure_rate);
    capt::write_file_atomic(dir / "scoring_report.txt", buf);
    capt::write_file_atomic(dir / "utterances.csv", capt::scoring_rows_csv(rows));
    std::printf("%s", buf);
  }
  std::printf("reports: %s\n", dir.string().c_str());
  return 0;
}

int cmd_ablate(const std::string& config_path, const std::string& preset,
               const std::string& corpus_dir, const std::string& seeds_csv, const std::string& out,
               int threads, bool verbose) {
  const capt::RunConfig cfg = load_config_or_preset(config_path, preset);
  const std::vector<uint64_t> seeds = parse_seed_list(seeds_csv);

  json resolved = capt::to_json(cfg);
  json seeds_json = json::array();
  for (uint64_t s : seeds) seeds_json.push_back(s);
  resolved["command"] = {{"name", "ablate"}, {"seeds", seeds_json}, {"corpus", corpus_dir}};
  const fs::path dir = make_run_dir("ablate", resolved, out);

  capt::AblationInputs inputs;
  inputs.encoder = cfg.encoder;
  inputs.adapter = cfg.adapter;
  inputs.lm = cfg.lm;
  inputs.stage1 = cfg.train_stage1;
  inputs.stage2 = cfg.train_stage2;
  inputs.train_set = capt::load_manifest(fs::path(corpus_dir) / "train.jsonl");
  inputs.test_set = capt::load_manifest(fs::path(corpus_dir) / "test.jsonl");
  inputs.seeds = seeds;
  inputs.out_dir = dir;
  inputs.threads = threads > 0 ? threads : cfg.threads;
  inputs.verbose = verbose;

  const capt::AblationResult result = capt::run_ablation<float>(inputs);
  const std::string table = capt::ablation_table(result);
  capt::write_file_atomic(dir / "ablation_report.json", capt::to_json(result).dump(2) + "\n");
  capt::write_file_atomic(dir / "ablation_report.txt", table);
  std::printf("%s", table.c_str());
  std::printf("artifacts: %s\n", dir.string().c_str());
  return 0;
}

int cmd_infer(const std::string& checkpoint, const std::string& audio_path,
              const std::string& prompt, int sample_rate, bool unconstrained) {
  const auto state = capt::load_checkpoint<float>(checkpoint);
  capt::Utterance utt;
  utt.id = audio_path;
  utt.samples = capt::read_f32le(audio_path);
  utt.sample_rate = sample_rate;

  const capt::Mat<float> features = capt::adapted_features(state, utt);
  const std::optional<std::string> prompt_text =
      prompt.empty() ? std::nullopt : std::optional<std::string>(prompt);
  const capt::PromptBundle bundle =
      capt::build_text_input(state.vocab, capt::TaskKind::scoring, prompt_text);
  const std::string score =
      capt::generate(features, bundle, 24, !unconstrained, state.lm_config, state.params,
                     state.lm, state.vocab);
  std::printf("%s\n", score.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"align-free multimodal pronunciation assessment (synthetic, desk scale)"};
  app.require_subcommand(1);

  std::string config_path, preset = "toy", out, corpus_dir, init_from, checkpoint, task;
  std::string seeds_csv = "1,2,3", audio_path, prompt;
  int stage = 1, threads = 0, sample_rate = 2000;
  bool force = false, no_prompt_text = false, unconstrained = false, verbose = false;

  auto* gen = app.add_subcommand("gen-corpus", "generate the synthetic corpus");
  gen->add_option("--config", config_path, "run config JSON");
  gen->add_option("--preset", preset, "preset when no config is given (toy|paper)");
  gen->add_option("--out", out, "output corpus directory");
  gen->add_flag("--force", force, "overwrite a non-empty output directory");

  auto* train = app.add_subcommand("train", "run one training stage");
  train->add_option("--stage", stage, "training stage (1=ASR, 2=scoring)")->required();
  train->add_option("--config", config_path, "run config JSON");
  train->add_option("--preset", preset, "preset when no config is given");
  train->add_option("--corpus", corpus_dir, "corpus directory")->required();
  train->add_option("--init-from", init_from, "checkpoint to initialize from");
  train->add_option("--out", out, "run directory (default: derived)");
  train->add_option("--threads", threads, "worker threads (0 = all)");

  auto* eval = app.add_subcommand("evaluate", "evaluate a checkpoint on the test split");
  eval->add_option("--task", task, "asr or scoring")->required();
  eval->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  eval->add_option("--corpus", corpus_dir, "corpus directory")->required();
  eval->add_flag("--no-prompt-text", no_prompt_text, "disable prompt conditioning (scoring)");
  eval->add_option("--out", out, "run directory (default: derived)");
  eval->add_option("--threads", threads, "worker threads (0 = all)");

  auto* ablate = app.add_subcommand("ablate", "run the four-arm ablation");
  ablate->add_option("--config", config_path, "run config JSON");
  ablate->add_option("--preset", preset, "preset when no config is given");
  ablate->add_option("--corpus", corpus_dir, "corpus directory")->required();
  ablate->add_option("--seeds", seeds_csv, "comma-separated seeds (default 1,2,3)");
  ablate->add_option("--out", out, "run directory (default: derived)");
  ablate->add_option("--threads", threads, "worker threads (0 = all)");
  ablate->add_flag("--verbose", verbose, "progress on stderr");

  auto* infer = app.add_subcommand("infer", "score one audio file");
  infer->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  infer->add_option("--audio", audio_path, "f32le audio file")->required();
  infer->add_option("--prompt", prompt, "prompt text (omit to disable conditioning)");
  infer->add_option("--sample-rate", sample_rate, "audio sample rate (default 2000)");
  infer->add_flag("--unconstrained", unconstrained, "disable grammar-constrained decoding");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help() << std::flush;
    return 2;
  }

  try {
    if (gen->parsed()) return cmd_gen_corpus(config_path, preset, out, force);
    if (train->parsed())
      return cmd_train(stage, config_path, preset, corpus_dir, init_from, out, threads);
    if (eval->parsed())
      return cmd_evaluate(task, checkpoint, corpus_dir, no_prompt_text, out, threads);
    if (ablate->parsed())
      return cmd_ablate(config_path, preset, corpus_dir, seeds_csv, out, threads, verbose);
    if (infer->parsed())
      return cmd_infer(checkpoint, audio_path, prompt, sample_rate, unconstrained);
  } catch (const capt::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
