// SPDX-License-Identifier: Apache-2.0
//
// Feedback text preprocessing: spell correction against a reference
// vocabulary and embedding lookup for token sequences and attribute sets.
#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "mfir/core.hpp"
#include "mfir/corpus.hpp"
#include "mfir/tokenize.hpp"

namespace mfir {

// Levenshtein distance with early exit once the result is known to
// exceed `cap`. Returns cap + 1 in that case.
inline int edit_distance_capped(const std::string& a, const std::string& b,
                                int cap) {
  const int n = static_cast<int>(a.size());
  const int m = static_cast<int>(b.size());
  if (std::abs(n - m) > cap) return cap + 1;
  std::vector<int> prev(m + 1), cur(m + 1);
  for (int j = 0; j <= m; ++j) prev[j] = j;
  for (int i = 1; i <= n; ++i) {
    cur[0] = i;
    int row_min = cur[0];
    for (int j = 1; j <= m; ++j) {
      const int sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
      row_min = std::min(row_min, cur[j]);
    }
    if (row_min > cap) return cap + 1;
    std::swap(prev, cur);
  }
  return prev[m] <= cap ? prev[m] : cap + 1;
}

struct SpellLexicon {
  std::unordered_map<std::string, std::string> corrections;
  std::unordered_set<std::string> vocab;
  std::unordered_map<std::string, long> frequency;  // tie-break preference
  int max_edit_distance = 2;

  bool in_vocab(const std::string& token) const {
    return vocab.count(token) > 0;
  }
};

// Lexicon file format: one `wrong<TAB>right` pair per line. Entries whose
// correction is not in `vocab` are dropped (their count is returned via
// `dropped`), keeping the invariant that corrections are in-vocabulary.
inline SpellLexicon load_spell_lexicon(
    const std::filesystem::path& path,
    const std::unordered_set<std::string>& vocab, int* dropped = nullptr) {
  std::ifstream in(path);
  require(in.good(), "cannot open spelling lexicon: ", path.string());
  SpellLexicon lex;
  lex.vocab = vocab;
  std::string line;
  int lineno = 0, skipped = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    require(tab != std::string::npos && tab > 0 && tab + 1 < line.size(),
            path.string(), ":", lineno, ": expected 'wrong<TAB>right'");
    std::string wrong = line.substr(0, tab);
    std::string right = line.substr(tab + 1);
    if (!right.empty() && right.back() == '\r') right.pop_back();
    if (!vocab.count(right)) {
      ++skipped;
      continue;
    }
    lex.corrections[wrong] = right;
  }
  if (dropped) *dropped = skipped;
  return lex;
}

inline SpellLexicon make_spell_lexicon(
    const std::unordered_set<std::string>& vocab) {
  SpellLexicon lex;
  lex.vocab = vocab;
  return lex;
}

// In-vocabulary tokens pass through. OOV tokens take the lexicon hit when
// present, otherwise the closest in-vocabulary token within the edit
// distance cap (ties: higher corpus frequency first, then lexicographic),
// otherwise the token is kept as-is.
inline std::vector<std::string> correct_spelling(
    const std::vector<std::string>& tokens, const SpellLexicon& lex) {
  std::vector<std::string> out;
  out.reserve(tokens.size());
  for (const auto& tok : tokens) {
    if (lex.in_vocab(tok)) {
      out.push_back(tok);
      continue;
    }
    auto hit = lex.corrections.find(tok);
    if (hit != lex.corrections.end()) {
      out.push_back(hit->second);
      continue;
    }
    int best_dist = lex.max_edit_distance + 1;
    long best_freq = -1;
    const std::string* best = nullptr;
    for (const auto& cand : lex.vocab) {
      const int d = edit_distance_capped(tok, cand, lex.max_edit_distance);
      if (d > lex.max_edit_distance) continue;
      long freq = 0;
      if (auto fit = lex.frequency.find(cand); fit != lex.frequency.end())
        freq = fit->second;
      const bool better =
          d < best_dist ||
          (d == best_dist &&
           (freq > best_freq || (freq == best_freq && best && cand < *best)));
      if (better) {
        best_dist = d;
        best_freq = freq;
        best = &cand;
      }
    }
    out.push_back(best ? *best : tok);
  }
  return out;
}

// Row j holds the vector of tokens[j]; OOV rows are the UNK vector.
// Shape is len(tokens) x dim, possibly 0 x dim.
inline Eigen::MatrixXd embed_sequence(const std::vector<std::string>& tokens,
                                      const EmbeddingTable& table) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(tokens.size()), table.dim);
  for (std::size_t j = 0; j < tokens.size(); ++j)
    m.row(static_cast<Eigen::Index>(j)) = table.lookup(tokens[j]).transpose();
  return m;
}

// One vector per slot: the mean over all word vectors of all phrases in
// the slot. Empty slots map to the zero vector.
inline std::array<Eigen::VectorXd, 5> embed_attribute_set(
    const AttributeSet& attrs, const EmbeddingTable& table) {
  std::array<Eigen::VectorXd, 5> out;
  for (int s = 0; s < 5; ++s) {
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(table.dim);
    long words = 0;
    for (const auto& phrase : attrs.slot(s)) {
      for (const auto& tok : phrase) {
        acc += table.lookup(tok);
        ++words;
      }
    }
    out[s] = words > 0 ? Eigen::VectorXd(acc / static_cast<double>(words))
                       : std::move(acc);
  }
  return out;
}

// Token frequencies over session feedback; feeds the spell corrector's
// tie-break.
inline std::unordered_map<std::string, long> count_feedback_tokens(
    const std::vector<Session>& sessions) {
  std::unordered_map<std::string, long> freq;
  for (const auto& s : sessions)
    for (const auto& t : s.turns)
      for (const auto& tok : tokenize(t.feedback)) ++freq[tok];
  return freq;
}

}  // namespace mfir
