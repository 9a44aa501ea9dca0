#pragma once

#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "capt/metrics.hpp"
#include "capt/model.hpp"
#include "capt/parallel.hpp"
#include "capt/text.hpp"

namespace capt {

struct AsrReport {
  double wer = 0.0;
  int n_utterances = 0;
  int substitutions = 0;
  int deletions = 0;
  int insertions = 0;
  int ref_words = 0;
};

struct AsrUtteranceRow {
  std::string id;
  std::string reference;   // normalized
  std::string hypothesis;  // normalized
  WerResult wer;
};

struct ScoringReport {
  double pcc_accuracy = 0.0;
  double pcc_fluency = 0.0;
  double parse_failure_rate = 0.0;
  int n_valid = 0;
  int n_utterances = 0;
};

struct ScoringUtteranceRow {
  std::string id;
  std::string prediction;  // raw generated string
  std::optional<ScorePair> parsed;
  int label_accuracy = 0;
  int label_fluency = 0;
};

// ASR evaluation over a transcription function (the model path wraps
// transcribe()); both sides are normalized, and the corpus WER is total edit
// distance over total reference words.
inline AsrReport evaluate_asr_with(const std::function<std::string(const Utterance&)>& transcriber,
                                   const std::vector<Utterance>& test_set,
                                   std::vector<AsrUtteranceRow>* rows_out = nullptr,
                                   int threads = 0) {
  require(!test_set.empty(), errc::invalid_argument, "evaluate_asr: empty test set");
  std::vector<AsrUtteranceRow> rows(test_set.size());
  parallel_for(static_cast<int>(test_set.size()), threads, [&](int i) {
    const Utterance& utt = test_set[static_cast<size_t>(i)];
    AsrUtteranceRow row;
    row.id = utt.id;
    row.reference = normalize_text(utt.spoken_text());
    row.hypothesis = normalize_text(transcriber(utt));
    row.wer = wer(row.reference, row.hypothesis);
    rows[static_cast<size_t>(i)] = std::move(row);
  });
  AsrReport report;
  report.n_utterances = static_cast<int>(rows.size());
  int total_distance = 0;
  for (const auto& row : rows) {
    total_distance += row.wer.distance;
    report.ref_words += row.wer.ref_words;
    report.substitutions += row.wer.substitutions;
    report.deletions += row.wer.deletions;
    report.insertions += row.wer.insertions;
  }
  report.wer = static_cast<double>(total_distance) / report.ref_words;
  if (rows_out) *rows_out = std::move(rows);
  return report;
}

template <typename T>
AsrReport evaluate_asr(const ModelState<T>& state, const std::vector<Utterance>& test_set,
                       std::vector<AsrUtteranceRow>* rows_out = nullptr, int threads = 0) {
  return evaluate_asr_with(
      [&](const Utterance& utt) {
        const int budget = 2 * static_cast<int>(utt.spoken_text().size()) + 8;
        return transcribe(state, utt, budget);
      },
      test_set, rows_out, threads);
}

// Scoring evaluation: constrained greedy prediction, parse, and PCC between
// predicted and labeled scores. Unparseable outputs are excluded from the
// correlations and counted in parse_failure_rate.
inline ScoringReport evaluate_scoring_with(
    const std::function<std::string(const Utterance&)>& predictor,
    const std::vector<Utterance>& test_set, std::vector<ScoringUtteranceRow>* rows_out = nullptr,
    int threads = 0) {
  require(!test_set.empty(), errc::invalid_argument, "evaluate_scoring: empty test set");
  std::vector<ScoringUtteranceRow> rows(test_set.size());
  parallel_for(static_cast<int>(test_set.size()), threads, [&](int i) {
    const Utterance& utt = test_set[static_cast<size_t>(i)];
    ScoringUtteranceRow row;
    row.id = utt.id;
    row.prediction = predictor(utt);
    row.parsed = parse_score(row.prediction);
    row.label_accuracy = utt.accuracy;
    row.label_fluency = utt.fluency;
    rows[static_cast<size_t>(i)] = std::move(row);
  });
  ScoringReport report;
  report.n_utterances = static_cast<int>(rows.size());
  std::vector<double> pred_acc, pred_flu, label_acc, label_flu;
  for (const auto& row : rows) {
    if (!row.parsed.has_value()) continue;
    pred_acc.push_back(row.parsed->accuracy);
    pred_flu.push_back(row.parsed->fluency);
    label_acc.push_back(row.label_accuracy);
    label_flu.push_back(row.label_fluency);
  }
  report.n_valid = static_cast<int>(pred_acc.size());
  report.parse_failure_rate =
      static_cast<double>(report.n_utterances - report.n_valid) / report.n_utterances;
  require(report.n_valid >= 2, errc::too_few_valid_pairs,
          "evaluate_scoring: fewer than 2 parseable predictions");
  report.pcc_accuracy = pcc(pred_acc, label_acc);
  report.pcc_fluency = pcc(pred_flu, label_flu);
  if (rows_out) *rows_out = std::move(rows);
  return report;
}

template <typename T>
ScoringReport evaluate_scoring(const ModelState<T>& state, const std::vector<Utterance>& test_set,
                               bool use_prompt_text,
                               std::vector<ScoringUtteranceRow>* rows_out = nullptr,
                               int threads = 0) {
  return evaluate_scoring_with(
      [&](const Utterance& utt) { return predict_score_string(state, utt, use_prompt_text); },
      test_set, rows_out, threads);
}

// ---- per-utterance CSV sidecars (every aggregate is recomputable) ----

inline std::string asr_rows_csv(const std::vector<AsrUtteranceRow>& rows) {
  std::ostringstream os;
  os << "id,reference,hypothesis,distance,ref_words,substitutions,deletions,insertions\n";
  for (const auto& r : rows) {
    os << r.id << "," << r.reference << "," << r.hypothesis << "," << r.wer.distance << ","
       << r.wer.ref_words << "," << r.wer.substitutions << "," << r.wer.deletions << ","
       << r.wer.insertions << "\n";
  }
  return os.str();
}

inline std::string scoring_rows_csv(const std::vector<ScoringUtteranceRow>& rows) {
  std::ostringstream os;
  os << "id,prediction,parsed_accuracy,parsed_fluency,label_accuracy,label_fluency\n";
  for (const auto& r : rows) {
    os << r.id << "," << r.prediction << ",";
    if (r.parsed.has_value())
      os << r.parsed->accuracy << "," << r.parsed->fluency;
    else
      os << ",";
    os << "," << r.label_accuracy << "," << r.label_fluency << "\n";
  }
  return os.str();
}

}  // namespace capt
