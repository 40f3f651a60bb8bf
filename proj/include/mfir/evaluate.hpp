// SPDX-License-Identifier: Apache-2.0
//
// The evaluation report (overall / per-category / per-turn-length R@K and
// MRR), the precomputed candidate index, and top-k retrieval with a
// human-readable report.
#pragma once

#include <filesystem>
#include <iomanip>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "mfir/attribute.hpp"
#include "mfir/comparative.hpp"
#include "mfir/composite.hpp"
#include "mfir/data.hpp"
#include "mfir/fusion.hpp"
#include "mfir/metrics.hpp"
#include "mfir/training.hpp"

namespace mfir {

// ---------------------------------------------------------------------------
// Evaluation report

struct EvalReport {
  struct Slice {
    long sessions = 0;
    double r5 = 0.0, r8 = 0.0, mrr = 0.0;
  };
  Slice overall;
  std::map<std::string, Slice> per_category;
  std::map<int, Slice> per_turn_length;  // image-count convention: 3/4/5
  std::vector<std::pair<std::string, int>> per_session;  // (session_id, rank)

  json to_json() const {
    auto slice_json = [](const Slice& s) {
      return json{{"sessions", s.sessions},
                  {"r5", s.r5},
                  {"r8", s.r8},
                  {"mrr", s.mrr}};
    };
    json cats = json::object(), turns = json::object();
    for (const auto& [name, s] : per_category) cats[name] = slice_json(s);
    for (const auto& [n, s] : per_turn_length)
      turns[std::to_string(n)] = slice_json(s);
    json sessions = json::array();
    for (const auto& [id, rank] : per_session)
      sessions.push_back({{"session_id", id}, {"target_rank", rank}});
    return json{{"overall", slice_json(overall)},
                {"per_category", cats},
                {"per_turn_length", turns},
                {"per_session", sessions}};
  }

  std::string render_table() const {
    std::ostringstream os;
    os << std::fixed << std::setprecision(4);
    os << "Slice | Sessions | R@5 | R@8 | MRR\n";
    os << "------|----------|-----|-----|----\n";
    auto row = [&](const std::string& name, const Slice& s) {
      os << name << " | " << s.sessions << " | " << s.r5 << " | " << s.r8
         << " | " << s.mrr << "\n";
    };
    row("overall", overall);
    for (const auto& [name, s] : per_category) row(name, s);
    for (const auto& [n, s] : per_turn_length)
      row(strf(n, "-turn"), s);
    return os.str();
  }
};

// Builds the report from fused per-category matrices. image_count maps
// session ids to their reported turn length.
inline EvalReport build_eval_report(
    const std::vector<ScoreMatrix>& fused,
    const std::map<std::string, int>& image_count) {
  struct Bucket {
    std::vector<int> ranks;
  };
  Bucket all;
  std::map<std::string, Bucket> cats;
  std::map<int, Bucket> turns;
  EvalReport report;

  for (const auto& m : fused) {
    auto ranks = target_ranks(m);
    for (std::size_t i = 0; i < ranks.size(); ++i) {
      all.ranks.push_back(ranks[i]);
      cats[to_string(m.category)].ranks.push_back(ranks[i]);
      auto it = image_count.find(m.session_ids[i]);
      require(it != image_count.end(), "report: unknown session '",
              m.session_ids[i], "'");
      turns[it->second].ranks.push_back(ranks[i]);
      report.per_session.emplace_back(m.session_ids[i], ranks[i]);
    }
  }
  auto slice_of = [](const Bucket& b) {
    EvalReport::Slice s;
    s.sessions = static_cast<long>(b.ranks.size());
    s.r5 = objective_of_ranks(b.ranks, Objective::r5);
    s.r8 = objective_of_ranks(b.ranks, Objective::r8);
    s.mrr = objective_of_ranks(b.ranks, Objective::mrr);
    return s;
  };
  report.overall = slice_of(all);
  for (const auto& [name, b] : cats) report.per_category[name] = slice_of(b);
  for (const auto& [n, b] : turns) report.per_turn_length[n] = slice_of(b);

  long total = 0;
  for (const auto& [n, s] : report.per_turn_length) total += s.sessions;
  require(total == report.overall.sessions,
          "report: turn-length breakdown does not sum to the total");
  return report;
}

// ---------------------------------------------------------------------------
// Candidate index

struct CandidateIndex {
  struct Entry {
    std::string id;
    Category category = Category::dress;
    Eigen::VectorXd composite_emb;
    Eigen::VectorXd comparative_emb;
    std::array<Eigen::VectorXd, 5> attributes;
  };
  std::vector<Entry> entries;  // sorted by id
  // identity of the checkpoints the embeddings came from
  std::string composite_fingerprint;
  std::string comparative_fingerprint;

  const Entry& get(const std::string& id) const {
    for (const auto& e : entries)
      if (e.id == id) return e;
    fail("index does not contain image '", id, "'");
  }

  std::vector<const Entry*> of_category(Category cat) const {
    std::vector<const Entry*> out;
    for (const auto& e : entries)
      if (e.category == cat) out.push_back(&e);
    return out;
  }

  void save(const std::filesystem::path& path) const;
  static CandidateIndex load(const std::filesystem::path& path);
};

inline std::string checkpoint_fingerprint(const ModelCheckpoint& c) {
  return strf(std::hex, fnv1a64(c.blob.data(), c.blob.size()));
}

inline std::string params_fingerprint(ScoringModule& m) {
  auto blob = m.params().serialize();
  return strf(std::hex, fnv1a64(blob.data(), blob.size()));
}

// Precomputes per-candidate embeddings for every catalog image; rebuild
// is deterministic given the checkpoints.
inline CandidateIndex build_candidate_index(const Dataset& data,
                                            CompositeScorer& composite,
                                            ComparativeScorer& comparative,
                                            int input_size) {
  CandidateIndex index;
  index.composite_fingerprint = params_fingerprint(composite);
  index.comparative_fingerprint = params_fingerprint(comparative);

  std::vector<CandidateFeatures> feats;
  for (const auto& [id, entry] : data.manifest.entries)
    feats.push_back(make_candidate_features(data, id, input_size));

  Eigen::MatrixXd comp = composite.encode_candidates(feats);
  Eigen::MatrixXd cmpv = comparative.encode_candidates(feats);
  for (std::size_t i = 0; i < feats.size(); ++i) {
    CandidateIndex::Entry e;
    e.id = feats[i].id;
    e.category = data.manifest.entries.at(e.id).category;
    e.composite_emb = comp.col(static_cast<Eigen::Index>(i));
    e.comparative_emb = cmpv.col(static_cast<Eigen::Index>(i));
    e.attributes = feats[i].attributes;
    index.entries.push_back(std::move(e));
  }
  return index;
}

inline void CandidateIndex::save(const std::filesystem::path& path) const {
  json header{{"composite_fingerprint", composite_fingerprint},
              {"comparative_fingerprint", comparative_fingerprint},
              {"count", entries.size()}};
  json list = json::array();
  std::vector<double> payload;
  for (const auto& e : entries) {
    list.push_back({{"id", e.id},
                    {"category", to_string(e.category)},
                    {"composite_dim", e.composite_emb.size()},
                    {"comparative_dim", e.comparative_emb.size()},
                    {"attr_dim", e.attributes[0].size()}});
    for (Eigen::Index i = 0; i < e.composite_emb.size(); ++i)
      payload.push_back(e.composite_emb(i));
    for (Eigen::Index i = 0; i < e.comparative_emb.size(); ++i)
      payload.push_back(e.comparative_emb(i));
    for (const auto& a : e.attributes)
      for (Eigen::Index i = 0; i < a.size(); ++i) payload.push_back(a(i));
  }
  header["entries"] = std::move(list);
  header["checksum"] = strf(
      std::hex, fnv1a64(payload.data(), payload.size() * sizeof(double)));
  const std::string header_str = header.dump();

  std::ofstream out(path, std::ios::binary);
  require(out.good(), "cannot open index for writing: ", path.string());
  out.write("MFIRIDX1", 8);
  const std::uint32_t len = static_cast<std::uint32_t>(header_str.size());
  out.write(reinterpret_cast<const char*>(&len), 4);
  out.write(header_str.data(), len);
  out.write(reinterpret_cast<const char*>(payload.data()),
            static_cast<std::streamsize>(payload.size() * sizeof(double)));
  require(out.good(), "short write: ", path.string());
}

inline CandidateIndex CandidateIndex::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "cannot open index: ", path.string());
  char magic[8];
  in.read(magic, 8);
  require(in.good() && std::memcmp(magic, "MFIRIDX1", 8) == 0, path.string(),
          ": not a candidate index file");
  std::uint32_t len = 0;
  in.read(reinterpret_cast<char*>(&len), 4);
  std::string header_str(len, '\0');
  in.read(header_str.data(), len);
  require(in.good(), path.string(), ": truncated header");
  json header = json::parse(header_str);

  CandidateIndex index;
  index.composite_fingerprint =
      header.at("composite_fingerprint").get<std::string>();
  index.comparative_fingerprint =
      header.at("comparative_fingerprint").get<std::string>();
  std::size_t doubles = 0;
  for (const auto& e : header.at("entries")) {
    doubles += e.at("composite_dim").get<std::size_t>() +
               e.at("comparative_dim").get<std::size_t>() +
               5 * e.at("attr_dim").get<std::size_t>();
  }
  std::vector<double> payload(doubles);
  in.read(reinterpret_cast<char*>(payload.data()),
          static_cast<std::streamsize>(doubles * sizeof(double)));
  require(in.good(), path.string(), ": truncated payload");
  const std::string got = strf(
      std::hex, fnv1a64(payload.data(), payload.size() * sizeof(double)));
  require(got == header.at("checksum").get<std::string>(), path.string(),
          ": checksum mismatch (corrupt payload)");

  std::size_t at = 0;
  for (const auto& ej : header.at("entries")) {
    Entry e;
    e.id = ej.at("id").get<std::string>();
    e.category = category_from_string(ej.at("category").get<std::string>());
    const auto cd = ej.at("composite_dim").get<Eigen::Index>();
    const auto md = ej.at("comparative_dim").get<Eigen::Index>();
    const auto ad = ej.at("attr_dim").get<Eigen::Index>();
    e.composite_emb.resize(cd);
    for (Eigen::Index i = 0; i < cd; ++i) e.composite_emb(i) = payload[at++];
    e.comparative_emb.resize(md);
    for (Eigen::Index i = 0; i < md; ++i) e.comparative_emb(i) = payload[at++];
    for (auto& a : e.attributes) {
      a.resize(ad);
      for (Eigen::Index i = 0; i < ad; ++i) a(i) = payload[at++];
    }
    index.entries.push_back(std::move(e));
  }
  return index;
}

// Refuses indexes built from different parameters than the loaded models.
inline void verify_index(const CandidateIndex& index,
                         CompositeScorer& composite,
                         ComparativeScorer& comparative) {
  require(index.composite_fingerprint == params_fingerprint(composite),
          "index was built with a different composite checkpoint; rebuild it");
  require(index.comparative_fingerprint == params_fingerprint(comparative),
          "index was built with a different comparative checkpoint; rebuild ",
          "it");
}

// ---------------------------------------------------------------------------
// Split evaluation

struct EvaluationArtifacts {
  std::vector<ScoreMatrix> s1, s2, s3, fused;  // per category, aligned
  EvalReport report;
};

// Scores the given sessions against per-category pools under all three
// modules, fuses with the supplied weights, and builds the report. When
// an index is supplied its candidate embeddings are used verbatim.
inline EvaluationArtifacts evaluate_split(
    const Dataset& data, const std::vector<int>& session_indices,
    CompositeScorer& composite, ComparativeScorer& comparative,
    AttributeScorer& attribute, const FusionWeights& weights, int input_size,
    int threads, const CandidateIndex* index = nullptr) {
  if (index) verify_index(*index, composite, comparative);

  EvaluationArtifacts out;
  std::map<std::string, int> image_count;
  std::map<Category, std::vector<const Session*>> by_cat;
  for (int i : session_indices) {
    const Session& s = data.sessions.at(i);
    by_cat[s.category].push_back(&s);
    image_count[s.session_id] = s.image_count();
  }

  for (const auto& [cat, sessions] : by_cat) {
    std::vector<SessionInput> inputs;
    inputs.reserve(sessions.size());
    for (const Session* s : sessions)
      inputs.push_back(make_session_input(data, *s, input_size));

    auto pool_ids = data.manifest.ids_of_category(cat);
    std::vector<CandidateFeatures> pool;
    Eigen::MatrixXd comp_embs, cmp_embs;
    if (index) {
      comp_embs.resize(composite.config().d_p,
                       static_cast<Eigen::Index>(pool_ids.size()));
      cmp_embs.resize(comparative.config().d_p,
                      static_cast<Eigen::Index>(pool_ids.size()));
      for (std::size_t j = 0; j < pool_ids.size(); ++j) {
        const auto& e = index->get(pool_ids[j]);
        comp_embs.col(static_cast<Eigen::Index>(j)) = e.composite_emb;
        cmp_embs.col(static_cast<Eigen::Index>(j)) = e.comparative_emb;
        CandidateFeatures f;
        f.id = e.id;
        f.attributes = e.attributes;
        pool.push_back(std::move(f));
      }
    } else {
      for (const auto& id : pool_ids)
        pool.push_back(make_candidate_features(data, id, input_size));
      comp_embs = composite.encode_candidates(pool);
      cmp_embs = comparative.encode_candidates(pool);
    }

    auto base = [&](const std::string& module_id) {
      ScoreMatrix m;
      m.module_id = module_id;
      m.category = cat;
      for (const auto& s : inputs) {
        m.session_ids.push_back(s.session_id);
        m.target_ids.push_back(s.target_id);
      }
      m.candidate_ids = pool_ids;
      return m;
    };
    ScoreMatrix m1 = base("composite");
    m1.scores = composite.score_matrix_embs(inputs, comp_embs, threads);
    ScoreMatrix m2 = base("comparative");
    m2.scores = comparative.score_matrix_embs(inputs, cmp_embs, threads);
    ScoreMatrix m3 = base("attribute");
    m3.scores = attribute.score_matrix(inputs, pool, threads);

    out.fused.push_back(fuse(m1, m2, m3, weights));
    out.s1.push_back(std::move(m1));
    out.s2.push_back(std::move(m2));
    out.s3.push_back(std::move(m3));
  }
  out.report = build_eval_report(out.fused, image_count);
  return out;
}

// ---------------------------------------------------------------------------
// Retrieval

struct RetrievalItem {
  std::string id;
  int rank = 0;
  double fused = 0, s1 = 0, s2 = 0, s3 = 0;
};

struct RetrievalResult {
  Session query;  // target may be empty
  std::vector<RetrievalItem> items;
};

// Scores the session prefix against its category pool and returns the
// top-k (the full ranking when k >= pool size).
inline RetrievalResult retrieve_topk(const Dataset& data, const Session& query,
                                     int k, const CandidateIndex& index,
                                     CompositeScorer& composite,
                                     ComparativeScorer& comparative,
                                     AttributeScorer& attribute,
                                     const FusionWeights& weights,
                                     int input_size) {
  require(k >= 1, "retrieve: k must be positive");
  for (const auto& turn : query.turns)
    require(data.manifest.contains(turn.image_id), "unknown image id '",
            turn.image_id, "' in the session prefix");
  verify_index(index, composite, comparative);

  SessionInput input = make_session_input(data, query, input_size);

  auto pool = index.of_category(query.category);
  require(!pool.empty(), "no candidates of category ",
          to_string(query.category), " in the index");

  Eigen::MatrixXd comp_embs(composite.config().d_p, pool.size());
  Eigen::MatrixXd cmp_embs(comparative.config().d_p, pool.size());
  std::vector<CandidateFeatures> feats(pool.size());
  for (std::size_t j = 0; j < pool.size(); ++j) {
    comp_embs.col(static_cast<Eigen::Index>(j)) = pool[j]->composite_emb;
    cmp_embs.col(static_cast<Eigen::Index>(j)) = pool[j]->comparative_emb;
    feats[j].id = pool[j]->id;
    feats[j].attributes = pool[j]->attributes;
  }

  Eigen::MatrixXd s1 = composite.score_matrix_embs({input}, comp_embs, 1);
  Eigen::MatrixXd s2 = comparative.score_matrix_embs({input}, cmp_embs, 1);
  Eigen::MatrixXd s3 = attribute.score_matrix({input}, feats, 1);

  std::vector<RetrievalItem> items(pool.size());
  for (std::size_t j = 0; j < pool.size(); ++j) {
    items[j].id = pool[j]->id;
    items[j].s1 = s1(0, static_cast<Eigen::Index>(j));
    items[j].s2 = s2(0, static_cast<Eigen::Index>(j));
    items[j].s3 = s3(0, static_cast<Eigen::Index>(j));
    items[j].fused = weights.w1 * items[j].s1 + weights.w2 * items[j].s2 +
                     weights.w3 * items[j].s3;
  }
  std::sort(items.begin(), items.end(),
            [](const RetrievalItem& a, const RetrievalItem& b) {
              if (a.fused != b.fused) return a.fused > b.fused;
              return a.id < b.id;
            });
  if (static_cast<int>(items.size()) > k) items.resize(k);
  for (std::size_t j = 0; j < items.size(); ++j)
    items[j].rank = static_cast<int>(j) + 1;

  RetrievalResult result;
  result.query = query;
  result.items = std::move(items);
  return result;
}

inline std::string render_retrieval_text(const RetrievalResult& r,
                                         const Dataset& data) {
  std::ostringstream os;
  os << "Session " << r.query.session_id << " ("
     << to_string(r.query.category) << ")\n";
  for (std::size_t i = 0; i < r.query.turns.size(); ++i) {
    const auto& turn = r.query.turns[i];
    os << "  turn " << i + 1 << ": [" << turn.image_id << " -> "
       << data.manifest.entries.at(turn.image_id).path << "] \""
       << turn.feedback << "\"\n";
  }
  if (!r.query.target_image_id.empty())
    os << "  target: " << r.query.target_image_id << "\n";
  os << "Ranked candidates:\n";
  os << std::fixed << std::setprecision(4);
  for (const auto& item : r.items) {
    os << "  " << item.rank << ". " << item.id << "  fused=" << item.fused
       << "  s1=" << item.s1 << "  s2=" << item.s2 << "  s3=" << item.s3;
    if (item.id == r.query.target_image_id) os << "  <- target";
    os << "\n";
  }
  return os.str();
}

inline std::string render_retrieval_html(const RetrievalResult& r,
                                         const Dataset& data) {
  std::ostringstream os;
  os << "<!doctype html><html><head><meta charset=\"utf-8\">"
     << "<title>retrieval " << r.query.session_id << "</title></head><body>\n"
     << "<h2>Session " << r.query.session_id << " ("
     << to_string(r.query.category) << ")</h2>\n<ol>\n";
  for (const auto& turn : r.query.turns)
    os << "<li><img src=\"" << data.manifest.entries.at(turn.image_id).path
       << "\" width=\"96\"> " << turn.feedback << "</li>\n";
  os << "</ol>\n<h3>Top candidates</h3>\n<table border=\"1\">"
     << "<tr><th>rank</th><th>image</th><th>id</th><th>fused</th>"
     << "<th>s1</th><th>s2</th><th>s3</th></tr>\n";
  os << std::fixed << std::setprecision(4);
  for (const auto& item : r.items) {
    os << "<tr><td>" << item.rank << "</td><td><img src=\""
       << data.manifest.entries.at(item.id).path << "\" width=\"96\"></td><td>"
       << item.id << (item.id == r.query.target_image_id ? " (target)" : "")
       << "</td><td>" << item.fused << "</td><td>" << item.s1 << "</td><td>"
       << item.s2 << "</td><td>" << item.s3 << "</td></tr>\n";
  }
  os << "</table></body></html>\n";
  return os.str();
}

}  // namespace mfir
