// SPDX-License-Identifier: Apache-2.0
//
// Score matrices (sessions x candidates) with target bookkeeping, their
// cache file format, and the ranking metrics R@K and MRR. Ranking ties
// break by candidate id ascending so every reported number is
// reproducible bit for bit.
#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "mfir/core.hpp"
#include "mfir/corpus.hpp"

namespace mfir {

struct ScoreMatrix {
  std::string module_id;
  Category category = Category::dress;
  std::vector<std::string> session_ids;
  std::vector<std::string> candidate_ids;
  std::vector<std::string> target_ids;  // parallel to session_ids
  Eigen::MatrixXd scores;               // sessions x candidates

  void validate() const {
    require(scores.rows() == static_cast<Eigen::Index>(session_ids.size()),
            "score matrix: row count mismatch");
    require(scores.cols() == static_cast<Eigen::Index>(candidate_ids.size()),
            "score matrix: column count mismatch");
    require(target_ids.size() == session_ids.size(),
            "score matrix: target list mismatch");
    require(scores.allFinite(), "score matrix: non-finite entries");
    std::unordered_map<std::string, int> seen;
    for (const auto& id : candidate_ids)
      require(seen[id]++ == 0, "score matrix: duplicate candidate '", id, "'");
  }

  void save(const std::filesystem::path& path) const;
  static ScoreMatrix load(const std::filesystem::path& path);
};

// 1-based rank of each session's target under descending score,
// tie-break candidate id ascending. Targets must be in the pool.
inline std::vector<int> target_ranks(const ScoreMatrix& m) {
  std::unordered_map<std::string, int> col_of;
  for (int j = 0; j < static_cast<int>(m.candidate_ids.size()); ++j)
    col_of[m.candidate_ids[j]] = j;
  std::vector<int> ranks(m.session_ids.size());
  for (std::size_t i = 0; i < m.session_ids.size(); ++i) {
    auto it = col_of.find(m.target_ids[i]);
    require(it != col_of.end(), "target '", m.target_ids[i],
            "' of session '", m.session_ids[i],
            "' is absent from the candidate pool");
    const int tj = it->second;
    const double ts = m.scores(static_cast<Eigen::Index>(i), tj);
    int rank = 1;
    for (int j = 0; j < static_cast<int>(m.candidate_ids.size()); ++j) {
      if (j == tj) continue;
      const double s = m.scores(static_cast<Eigen::Index>(i), j);
      if (s > ts || (s == ts && m.candidate_ids[j] < m.candidate_ids[tj]))
        ++rank;
    }
    ranks[i] = rank;
  }
  return ranks;
}

struct RecallResult {
  double value = 0.0;
  std::vector<char> hits;  // per session
};

inline RecallResult recall_at_k(const ScoreMatrix& m, int k) {
  require(k >= 1, "recall_at_k: k must be positive");
  auto ranks = target_ranks(m);
  RecallResult r;
  r.hits.resize(ranks.size());
  long hit = 0;
  for (std::size_t i = 0; i < ranks.size(); ++i) {
    r.hits[i] = ranks[i] <= k ? 1 : 0;
    hit += r.hits[i];
  }
  r.value = ranks.empty() ? 0.0 : static_cast<double>(hit) / ranks.size();
  return r;
}

inline double mrr(const ScoreMatrix& m) {
  auto ranks = target_ranks(m);
  if (ranks.empty()) return 0.0;
  double sum = 0.0;
  for (int r : ranks) sum += 1.0 / r;
  return sum / static_cast<double>(ranks.size());
}

// ---------------------------------------------------------------------------
// Cache file: 8-byte magic, u32 header length, JSON header, row-major
// doubles. The header carries an FNV checksum of the payload.

inline void ScoreMatrix::save(const std::filesystem::path& path) const {
  validate();
  json header{{"module_id", module_id},
              {"category", to_string(category)},
              {"session_ids", session_ids},
              {"candidate_ids", candidate_ids},
              {"target_ids", target_ids},
              {"rows", scores.rows()},
              {"cols", scores.cols()}};
  const std::size_t payload_bytes = sizeof(double) * scores.size();
  header["checksum"] = strf(std::hex, fnv1a64(scores.data(), payload_bytes));
  const std::string header_str = header.dump();

  std::ofstream out(path, std::ios::binary);
  require(out.good(), "cannot open score matrix for writing: ", path.string());
  out.write("MFIRSMX1", 8);
  const std::uint32_t len = static_cast<std::uint32_t>(header_str.size());
  out.write(reinterpret_cast<const char*>(&len), 4);
  out.write(header_str.data(), len);
  // row-major so the header's rows/cols read naturally
  for (Eigen::Index i = 0; i < scores.rows(); ++i)
    out.write(reinterpret_cast<const char*>(
                  Eigen::RowVectorXd(scores.row(i)).data()),
              sizeof(double) * scores.cols());
  require(out.good(), "short write: ", path.string());
}

inline ScoreMatrix ScoreMatrix::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "cannot open score matrix: ", path.string());
  char magic[8];
  in.read(magic, 8);
  require(in.good() && std::memcmp(magic, "MFIRSMX1", 8) == 0, path.string(),
          ": not a score matrix file");
  std::uint32_t len = 0;
  in.read(reinterpret_cast<char*>(&len), 4);
  std::string header_str(len, '\0');
  in.read(header_str.data(), len);
  require(in.good(), path.string(), ": truncated header");
  json header = json::parse(header_str);

  ScoreMatrix m;
  m.module_id = header.at("module_id").get<std::string>();
  m.category = category_from_string(header.at("category").get<std::string>());
  m.session_ids = header.at("session_ids").get<std::vector<std::string>>();
  m.candidate_ids = header.at("candidate_ids").get<std::vector<std::string>>();
  m.target_ids = header.at("target_ids").get<std::vector<std::string>>();
  const Eigen::Index rows = header.at("rows").get<Eigen::Index>();
  const Eigen::Index cols = header.at("cols").get<Eigen::Index>();
  m.scores.resize(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    Eigen::RowVectorXd row(cols);
    in.read(reinterpret_cast<char*>(row.data()), sizeof(double) * cols);
    m.scores.row(i) = row;
  }
  require(in.good(), path.string(), ": truncated payload");
  const std::string want = header.at("checksum").get<std::string>();
  const std::string got =
      strf(std::hex, fnv1a64(m.scores.data(), sizeof(double) * m.scores.size()));
  require(want == got, path.string(), ": checksum mismatch (corrupt payload)");
  m.validate();
  return m;
}

}  // namespace mfir
