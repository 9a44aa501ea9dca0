#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "capt/error.hpp"

namespace capt {

// Character-level vocabulary: five specials followed by lowercase letters,
// digits, space and colon. Ids are dense from 0 and fixed by construction.
class Vocabulary {
 public:
  static constexpr int pad = 0;
  static constexpr int bos = 1;
  static constexpr int eos = 2;
  static constexpr int prefix_asr = 3;
  static constexpr int prefix_pa = 4;

  Vocabulary() {
    chars_.reserve(38);
    for (char c = 'a'; c <= 'z'; ++c) chars_.push_back(c);
    for (char c = '0'; c <= '9'; ++c) chars_.push_back(c);
    chars_.push_back(' ');
    chars_.push_back(':');
    char_to_id_.fill(-1);
    for (size_t i = 0; i < chars_.size(); ++i)
      char_to_id_[static_cast<unsigned char>(chars_[i])] = first_char_id + static_cast<int>(i);
  }

  int size() const { return first_char_id + static_cast<int>(chars_.size()); }

  int char_id(char c) const {
    const int id = char_to_id_[static_cast<unsigned char>(c)];
    require(id >= 0, errc::invalid_argument,
            std::string("tokenize: character not in vocabulary: '") + c + "'");
    return id;
  }

  bool is_char(int id) const { return id >= first_char_id && id < size(); }

  char id_char(int id) const {
    require(is_char(id), errc::invalid_argument, "id is not a character token");
    return chars_[static_cast<size_t>(id - first_char_id)];
  }

  std::vector<int> tokenize(const std::string& text) const {
    std::vector<int> ids;
    ids.reserve(text.size());
    for (char c : text) ids.push_back(char_id(c));
    return ids;
  }

  // Inverse of tokenize on character ids; specials render their display form.
  std::string detokenize(const std::vector<int>& ids) const {
    std::string out;
    for (int id : ids) {
      if (is_char(id)) {
        out.push_back(id_char(id));
      } else if (id == prefix_asr) {
        out += "<transcript>";
      } else if (id == prefix_pa) {
        out += "<Pronunciation Assessment>";
      }
      // PAD/BOS/EOS render as nothing.
    }
    return out;
  }

  std::string alphabet() const { return std::string(chars_.begin(), chars_.end()); }

 private:
  static constexpr int first_char_id = 5;
  std::string chars_;
  std::array<int, 256> char_to_id_{};
};

// ---- score codec ----

struct ScorePair {
  int accuracy = 0;
  int fluency = 0;

  bool operator==(const ScorePair&) const = default;
};

inline bool score_in_range(int v) { return v >= 0 && v <= 10; }

// Exactly "accuracy:A fluency:F" with decimal integers and a single space.
inline std::string format_score(const ScorePair& s) {
  require(score_in_range(s.accuracy) && score_in_range(s.fluency), errc::score_out_of_range,
          "format_score: scores must be in [0, 10]");
  return "accuracy:" + std::to_string(s.accuracy) + " fluency:" + std::to_string(s.fluency);
}

enum class ScoreParseError { none, format, order, non_integer, range };

inline const char* score_parse_error_name(ScoreParseError e) {
  switch (e) {
    case ScoreParseError::none: return "none";
    case ScoreParseError::format: return "format";
    case ScoreParseError::order: return "order";
    case ScoreParseError::non_integer: return "non_integer";
    case ScoreParseError::range: return "range";
  }
  return "?";
}

namespace detail {

// Parses a canonical score integer at position pos: one or two digits, no
// leading zero on two-digit numbers. Advances pos past the digits.
inline bool parse_score_int(const std::string& s, size_t& pos, int& out, ScoreParseError& err) {
  size_t start = pos;
  while (pos < s.size() && s[pos] >= '0' && s[pos] <= '9') ++pos;
  const size_t len = pos - start;
  if (len == 0) {
    err = ScoreParseError::non_integer;
    return false;
  }
  if (len > 2) {
    err = ScoreParseError::range;
    return false;
  }
  if (len == 2 && s[start] == '0') {
    err = ScoreParseError::format;
    return false;
  }
  out = 0;
  for (size_t i = start; i < pos; ++i) out = out * 10 + (s[i] - '0');
  if (out > 10) {
    err = ScoreParseError::range;
    return false;
  }
  err = ScoreParseError::none;
  return true;
}

}  // namespace detail

// Exact inverse of format_score; rejects everything else. The error out-param
// distinguishes missing/garbled fields, swapped field order, missing integers
// and out-of-range values.
inline std::optional<ScorePair> parse_score(const std::string& s,
                                            ScoreParseError* err_out = nullptr) {
  ScoreParseError err = ScoreParseError::none;
  auto fail = [&](ScoreParseError e) -> std::optional<ScorePair> {
    if (err_out) *err_out = e;
    return std::nullopt;
  };
  if (s.rfind("fluency:", 0) == 0) return fail(ScoreParseError::order);
  const std::string k1 = "accuracy:";
  if (s.rfind(k1, 0) != 0) return fail(ScoreParseError::format);
  size_t pos = k1.size();
  ScorePair result;
  if (!detail::parse_score_int(s, pos, result.accuracy, err)) return fail(err);
  const std::string k2 = " fluency:";
  if (s.compare(pos, k2.size(), k2) != 0) {
    // A second "accuracy:" field in fluency's slot is an ordering violation.
    if (s.compare(pos, 10, " accuracy:") == 0) return fail(ScoreParseError::order);
    return fail(ScoreParseError::format);
  }
  pos += k2.size();
  if (!detail::parse_score_int(s, pos, result.fluency, err)) return fail(err);
  if (pos != s.size()) return fail(ScoreParseError::format);
  if (err_out) *err_out = ScoreParseError::none;
  return result;
}

// ---- constrained-decoding grammar: accuracy:<0-10> fluency:<0-10> ----

// Incremental DFA over the score string. allowed_ids() lists the token ids
// (characters or EOS) that keep the output inside the grammar.
class ScoreGrammar {
 public:
  explicit ScoreGrammar(const Vocabulary& vocab) : vocab_(&vocab) { reset(); }

  void reset() {
    state_ = State::lit1;
    lit_pos_ = 0;
  }

  bool done() const { return state_ == State::done; }

  std::vector<int> allowed_ids() const {
    std::vector<int> ids;
    switch (state_) {
      case State::lit1:
        ids.push_back(vocab_->char_id(kLit1[lit_pos_]));
        break;
      case State::num1_start:
      case State::num2_start:
        for (char c = '0'; c <= '9'; ++c) ids.push_back(vocab_->char_id(c));
        break;
      case State::num1_after_one:
        ids.push_back(vocab_->char_id('0'));
        ids.push_back(vocab_->char_id(' '));
        break;
      case State::lit2:
        ids.push_back(vocab_->char_id(kLit2[lit_pos_]));
        break;
      case State::num2_after_one:
        ids.push_back(vocab_->char_id('0'));
        ids.push_back(Vocabulary::eos);
        break;
      case State::done:
        ids.push_back(Vocabulary::eos);
        break;
    }
    return ids;
  }

  // Consumes a token previously listed by allowed_ids().
  void advance(int id) {
    if (id == Vocabulary::eos) {
      require(state_ == State::done || state_ == State::num2_after_one, errc::invalid_argument,
              "score grammar: EOS not allowed here");
      state_ = State::done;
      return;
    }
    const char c = vocab_->id_char(id);
    switch (state_) {
      case State::lit1:
        require(c == kLit1[lit_pos_], errc::invalid_argument, "score grammar: bad literal char");
        if (++lit_pos_ == kLit1.size()) state_ = State::num1_start;
        break;
      case State::num1_start:
        require(c >= '0' && c <= '9', errc::invalid_argument, "score grammar: digit expected");
        lit_pos_ = 0;
        state_ = (c == '1') ? State::num1_after_one : State::lit2;
        break;
      case State::num1_after_one:
        if (c == '0') {
          state_ = State::lit2;
          lit_pos_ = 0;
        } else {
          require(c == ' ', errc::invalid_argument, "score grammar: '0' or ' ' expected");
          state_ = State::lit2;
          lit_pos_ = 1;  // the space was the first char of " fluency:"
        }
        break;
      case State::lit2:
        require(c == kLit2[lit_pos_], errc::invalid_argument, "score grammar: bad literal char");
        if (++lit_pos_ == kLit2.size()) state_ = State::num2_start;
        break;
      case State::num2_start:
        require(c >= '0' && c <= '9', errc::invalid_argument, "score grammar: digit expected");
        state_ = (c == '1') ? State::num2_after_one : State::done;
        break;
      case State::num2_after_one:
        require(c == '0', errc::invalid_argument, "score grammar: '0' expected");
        state_ = State::done;
        break;
      case State::done:
        throw Error(errc::invalid_argument, "score grammar: already complete");
    }
  }

 private:
  enum class State { lit1, num1_start, num1_after_one, lit2, num2_start, num2_after_one, done };

  static constexpr std::string_view kLit1 = "accuracy:";
  static constexpr std::string_view kLit2 = " fluency:";

  const Vocabulary* vocab_;
  State state_;
  size_t lit_pos_;
};

// ---- task prefixes and prompt construction ----

enum class TaskKind { asr, scoring };

struct PromptBundle {
  TaskKind task = TaskKind::asr;
  std::optional<std::string> prompt_text;  // nullopt: prompt conditioning disabled
  std::vector<int> token_ids;
};

// ASR -> [PREFIX_ASR]. Scoring with prompt -> [PREFIX_PA] + " the prompt text
// is <prompt>". Scoring with conditioning disabled -> [PREFIX_PA] only.
inline PromptBundle build_text_input(const Vocabulary& vocab, TaskKind task,
                                     const std::optional<std::string>& prompt_text) {
  PromptBundle bundle;
  bundle.task = task;
  bundle.prompt_text = prompt_text;
  if (task == TaskKind::asr) {
    require(!prompt_text.has_value(), errc::invalid_argument,
            "build_text_input: ASR takes no prompt text");
    bundle.token_ids = {Vocabulary::prefix_asr};
    return bundle;
  }
  bundle.token_ids = {Vocabulary::prefix_pa};
  if (prompt_text.has_value()) {
    require(!prompt_text->empty(), errc::empty_prompt,
            "build_text_input: scoring prompt text is empty");
    const std::vector<int> text = vocab.tokenize(" the prompt text is " + *prompt_text);
    bundle.token_ids.insert(bundle.token_ids.end(), text.begin(), text.end());
  }
  return bundle;
}

}  // namespace capt
