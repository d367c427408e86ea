#pragma once

// Character error rate with a substitution/deletion/insertion breakdown.

#include <algorithm>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace dcasr {

struct EditCounts {
  std::size_t sub = 0;
  std::size_t del = 0;
  std::size_t ins = 0;
  std::size_t ref_len = 0;

  std::size_t errors() const { return sub + del + ins; }
  double cer() const { return ref_len ? static_cast<double>(errors()) / static_cast<double>(ref_len) : 0.0; }

  EditCounts& operator+=(const EditCounts& o) {
    sub += o.sub;
    del += o.del;
    ins += o.ins;
    ref_len += o.ref_len;
    return *this;
  }
};

// Minimum edit distance alignment. Among optimal alignments the backtrace
// prefers a match or substitution, then a deletion, then an insertion.
template <typename Seq>
EditCounts align(const Seq& ref, const Seq& hyp) {
  const std::size_t n = ref.size(), m = hyp.size();
  std::vector<std::vector<std::size_t>> d(n + 1, std::vector<std::size_t>(m + 1));
  for (std::size_t i = 0; i <= n; ++i) d[i][0] = i;
  for (std::size_t j = 0; j <= m; ++j) d[0][j] = j;
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      const std::size_t diag = d[i - 1][j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      d[i][j] = std::min({diag, d[i - 1][j] + 1, d[i][j - 1] + 1});
    }
  }
  EditCounts c;
  c.ref_len = n;
  std::size_t i = n, j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0 && d[i][j] == d[i - 1][j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1)) {
      if (ref[i - 1] != hyp[j - 1]) ++c.sub;
      --i;
      --j;
    } else if (i > 0 && d[i][j] == d[i - 1][j] + 1) {
      ++c.del;
      --i;
    } else {
      ++c.ins;
      --j;
    }
  }
  return c;
}

// Sums edits over every reference utterance. A reference without a
// hypothesis, or a hypothesis without a reference, is an error.
inline EditCounts score_cer(const std::map<std::string, std::string>& hyp,
                            const std::map<std::string, std::string>& ref) {
  EditCounts total;
  for (const auto& [id, r] : ref) {
    auto it = hyp.find(id);
    if (it == hyp.end()) throw std::invalid_argument("score: no hypothesis for utt_id " + id);
    total += align(r, it->second);
  }
  for (const auto& [id, h] : hyp) {
    if (!ref.count(id)) throw std::invalid_argument("score: no reference for utt_id " + id);
  }
  return total;
}

}  // namespace dcasr
