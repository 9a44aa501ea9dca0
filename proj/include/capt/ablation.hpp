#pragma once

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "capt/checkpoint.hpp"
#include "capt/eval.hpp"
#include "capt/serde.hpp"
#include "capt/trainer.hpp"

namespace capt {

// The four ablation arms, in the fixed row order of the report:
//   (a) ASR training + Prompt text
//   (b) ASR training only
//   (c) Prompt text only
//   (d) -
struct AblationArm {
  char key;
  const char* label;
  bool asr_training;  // stage 2 initialized from the stage-1 checkpoint
  bool prompt_text;   // prompt conditioning in stage 2 and at evaluation
};

inline const std::vector<AblationArm>& ablation_arms() {
  static const std::vector<AblationArm> arms = {
      {'a', "ASR training + Prompt text", true, true},
      {'b', "ASR training only", true, false},
      {'c', "Prompt text only", false, true},
      {'d', "-", false, false},
  };
  return arms;
}

struct AblationArmResult {
  AblationArm arm;
  std::vector<ScoringReport> per_seed;
  double mean_pcc_accuracy = 0.0;
  double mean_pcc_fluency = 0.0;
};

struct AblationResult {
  std::vector<uint64_t> seeds;
  std::vector<AblationArmResult> arms;  // rows (a)..(d)
};

struct AblationInputs {
  EncoderConfig encoder;
  AdapterConfig adapter;
  LMConfig lm;
  TrainConfig stage1;  // seed is overridden per run
  TrainConfig stage2;
  std::vector<Utterance> train_set;
  std::vector<Utterance> test_set;
  std::vector<uint64_t> seeds;
  std::filesystem::path out_dir;  // artifacts root; empty disables writing
  int threads = 0;
  bool verbose = false;
};

// Runs 1 stage-1 training plus 4 stage-2 trainings per seed; arms (a) and (b)
// share the stage-1 checkpoint, arms (c) and (d) start stage 2 from random
// init. Per-arm PCCs are averaged over seeds.
template <typename T>
AblationResult run_ablation(const AblationInputs& inputs) {
  namespace fs = std::filesystem;
  require(!inputs.seeds.empty(), errc::invalid_argument, "run_ablation: no seeds");
  AblationResult result;
  result.seeds = inputs.seeds;
  for (const AblationArm& arm : ablation_arms()) result.arms.push_back({arm, {}, 0.0, 0.0});
  const bool write = !inputs.out_dir.empty();

  for (uint64_t seed : inputs.seeds) {
    const fs::path seed_dir = inputs.out_dir / ("seed" + std::to_string(seed));
    if (write) fs::create_directories(seed_dir);

    // Shared stage-1 checkpoint for arms (a) and (b).
    TrainConfig s1 = inputs.stage1;
    s1.stage = 1;
    s1.seed = seed;
    s1.threads = inputs.threads;
    if (inputs.verbose) std::fprintf(stderr, "[ablate] seed %llu: stage 1\n",
                                     static_cast<unsigned long long>(seed));
    auto stage1_run = train_stage(
        s1, inputs.train_set, init_model_state<T>(inputs.encoder, inputs.adapter, inputs.lm, seed));
    const fs::path stage1_ckpt = seed_dir / "stage1.ckpt";
    if (write) save_checkpoint(stage1_ckpt, stage1_run.state);

    for (AblationArmResult& arm_result : result.arms) {
      const AblationArm& arm = arm_result.arm;
      TrainConfig s2 = inputs.stage2;
      s2.stage = 2;
      s2.seed = seed;
      s2.threads = inputs.threads;
      s2.use_prompt_text = arm.prompt_text;
      s2.init_from = arm.asr_training ? stage1_ckpt.string() : std::string();
      if (inputs.verbose) std::fprintf(stderr, "[ablate] seed %llu: arm (%c) stage 2\n",
                                       static_cast<unsigned long long>(seed), arm.key);
      ModelState<T> init = arm.asr_training
                               ? stage1_run.state
                               : init_model_state<T>(inputs.encoder, inputs.adapter, inputs.lm,
                                                     seed);
      auto stage2_run = train_stage(s2, inputs.train_set, std::move(init));
      std::vector<ScoringUtteranceRow> rows;
      const ScoringReport report = evaluate_scoring(stage2_run.state, inputs.test_set,
                                                    arm.prompt_text, &rows, inputs.threads);
      arm_result.per_seed.push_back(report);
      if (write) {
        const fs::path arm_dir = seed_dir / (std::string("arm_") + arm.key);
        fs::create_directories(arm_dir);
        save_checkpoint(arm_dir / "stage2.ckpt", stage2_run.state);
        write_file_atomic(arm_dir / "predictions.csv", scoring_rows_csv(rows));
        json rj = {{"arm", std::string(1, arm.key)},
                   {"label", arm.label},
                   {"seed", seed},
                   {"pcc_accuracy", report.pcc_accuracy},
                   {"pcc_fluency", report.pcc_fluency},
                   {"parse_failure_rate", report.parse_failure_rate},
                   {"n_valid", report.n_valid}};
        write_file_atomic(arm_dir / "scoring_report.json", rj.dump(2) + "\n");
      }
    }
  }

  for (AblationArmResult& arm_result : result.arms) {
    double acc = 0.0, flu = 0.0;
    for (const ScoringReport& r : arm_result.per_seed) {
      acc += r.pcc_accuracy;
      flu += r.pcc_fluency;
    }
    arm_result.mean_pcc_accuracy = acc / static_cast<double>(arm_result.per_seed.size());
    arm_result.mean_pcc_fluency = flu / static_cast<double>(arm_result.per_seed.size());
  }
  return result;
}

inline json to_json(const AblationResult& result) {
  json arms = json::array();
  for (const auto& arm : result.arms) {
    json per_seed = json::array();
    for (const auto& r : arm.per_seed)
      per_seed.push_back({{"pcc_accuracy", r.pcc_accuracy}, {"pcc_fluency", r.pcc_fluency}});
    arms.push_back({{"arm", std::string(1, arm.arm.key)},
                    {"label", arm.arm.label},
                    {"mean_pcc_fluency", arm.mean_pcc_fluency},
                    {"mean_pcc_accuracy", arm.mean_pcc_accuracy},
                    {"per_seed", per_seed}});
  }
  json seeds = json::array();
  for (uint64_t s : result.seeds) seeds.push_back(s);
  return json{{"seeds", seeds}, {"arms", arms}};
}

// Human-readable table in the four-row ablation layout.
inline std::string ablation_table(const AblationResult& result) {
  std::string out;
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%-4s %-28s %9s %9s\n", "", "Factors", "Fluency", "Accuracy");
  out += buf;
  for (const auto& arm : result.arms) {
    std::snprintf(buf, sizeof(buf), "(%c)  %-28s %9.3f %9.3f\n", arm.arm.key, arm.arm.label,
                  arm.mean_pcc_fluency, arm.mean_pcc_accuracy);
    out += buf;
  }
  return out;
}

}  // namespace capt
