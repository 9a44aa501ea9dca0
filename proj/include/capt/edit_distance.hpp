#pragma once

#include <algorithm>
#include <vector>

namespace capt {

struct EditCounts {
  int distance = 0;
  int substitutions = 0;
  int deletions = 0;
  int insertions = 0;
};

// Levenshtein distance between token sequences with an S/D/I decomposition
// recovered by backtrace. Ties prefer match/substitution, then deletion,
// then insertion.
template <typename Seq>
EditCounts edit_distance(const Seq& ref, const Seq& hyp) {
  const int n = static_cast<int>(ref.size());
  const int m = static_cast<int>(hyp.size());
  std::vector<std::vector<int>> d(static_cast<size_t>(n) + 1,
                                  std::vector<int>(static_cast<size_t>(m) + 1, 0));
  for (int i = 0; i <= n; ++i) d[static_cast<size_t>(i)][0] = i;
  for (int j = 0; j <= m; ++j) d[0][static_cast<size_t>(j)] = j;
  for (int i = 1; i <= n; ++i) {
    for (int j = 1; j <= m; ++j) {
      const int sub = d[i - 1][j - 1] + (ref[static_cast<size_t>(i - 1)] ==
                                                 hyp[static_cast<size_t>(j - 1)]
                                             ? 0
                                             : 1);
      const int del = d[i - 1][j] + 1;
      const int ins = d[i][j - 1] + 1;
      d[static_cast<size_t>(i)][static_cast<size_t>(j)] = std::min({sub, del, ins});
    }
  }
  EditCounts counts;
  counts.distance = d[static_cast<size_t>(n)][static_cast<size_t>(m)];
  int i = n, j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0) {
      const bool match = ref[static_cast<size_t>(i - 1)] == hyp[static_cast<size_t>(j - 1)];
      if (d[i][j] == d[i - 1][j - 1] + (match ? 0 : 1)) {
        if (!match) ++counts.substitutions;
        --i;
        --j;
        continue;
      }
    }
    if (i > 0 && d[i][j] == d[i - 1][j] + 1) {
      ++counts.deletions;
      --i;
      continue;
    }
    ++counts.insertions;
    --j;
  }
  return counts;
}

}  // namespace capt
