#pragma once

#include <cctype>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "capt/edit_distance.hpp"
#include "capt/error.hpp"

namespace capt {

// Simplified deterministic text normalization: lowercase, strip punctuation,
// collapse whitespace. Idempotent by construction.
inline std::string normalize_text(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  bool pending_space = false;
  for (char raw : s) {
    const unsigned char c = static_cast<unsigned char>(raw);
    if (std::isspace(c)) {
      if (!out.empty()) pending_space = true;
      continue;
    }
    const char lower = static_cast<char>(std::tolower(c));
    if ((lower >= 'a' && lower <= 'z') || (lower >= '0' && lower <= '9')) {
      if (pending_space) out.push_back(' ');
      pending_space = false;
      out.push_back(lower);
    }
    // everything else is punctuation: dropped
  }
  return out;
}

inline std::vector<std::string> split_words(const std::string& s) {
  std::vector<std::string> words;
  std::istringstream is(s);
  std::string w;
  while (is >> w) words.push_back(w);
  return words;
}

struct WerResult {
  double wer = 0.0;
  int distance = 0;
  int ref_words = 0;
  int substitutions = 0;
  int deletions = 0;
  int insertions = 0;
};

// Word-level Levenshtein distance over whitespace-split tokens divided by the
// reference word count. Inputs should be normalized first.
inline WerResult wer(const std::string& ref, const std::string& hyp) {
  const std::vector<std::string> ref_words = split_words(ref);
  const std::vector<std::string> hyp_words = split_words(hyp);
  require(!ref_words.empty(), errc::wer_empty_reference, "wer: empty reference");
  const EditCounts counts = edit_distance(ref_words, hyp_words);
  WerResult r;
  r.distance = counts.distance;
  r.ref_words = static_cast<int>(ref_words.size());
  r.substitutions = counts.substitutions;
  r.deletions = counts.deletions;
  r.insertions = counts.insertions;
  r.wer = static_cast<double>(counts.distance) / r.ref_words;
  return r;
}

// Pearson correlation coefficient.
inline double pcc(const std::vector<double>& xs, const std::vector<double>& ys) {
  require(xs.size() == ys.size(), errc::pcc_length_mismatch, "pcc: length mismatch");
  require(xs.size() >= 2, errc::pcc_too_short, "pcc: need at least 2 points");
  const size_t n = xs.size();
  double mx = 0.0, my = 0.0;
  for (size_t i = 0; i < n; ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double dx = xs[i] - mx;
    const double dy = ys[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  require(sxx > 0.0 && syy > 0.0, errc::pcc_zero_variance, "pcc: an input has zero variance");
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace capt
