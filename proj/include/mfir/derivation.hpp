// SPDX-License-Identifier: Apache-2.0
//
// Multiturn session derivation: chains single-turn triplets into sessions
// and screens the result (duplicates, circles, feedback conflicts, plus a
// non-destructive inconsistency flag that feeds a review queue).
#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "json.hpp"
#include "mfir/core.hpp"
#include "mfir/corpus.hpp"
#include "mfir/tokenize.hpp"

namespace mfir {

struct Triplet {
  std::string ref;
  std::string feedback;
  std::string target;
  Category category = Category::dress;
};

inline std::vector<Triplet> load_triplets(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), "cannot open triplets file: ", path.string());
  std::vector<Triplet> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      json j = json::parse(line);
      Triplet t;
      t.ref = j.at("ref").get<std::string>();
      t.feedback = j.at("feedback").get<std::string>();
      t.target = j.at("target").get<std::string>();
      t.category = category_from_string(j.at("category").get<std::string>());
      require(t.ref != t.target, "ref equals target");
      out.push_back(std::move(t));
    } catch (const json::exception& e) {
      fail(path.string(), ":", lineno, ": ", e.what());
    } catch (const Error& e) {
      fail(path.string(), ":", lineno, ": ", e.what());
    }
  }
  return out;
}

inline void save_triplets(const std::filesystem::path& path,
                          const std::vector<Triplet>& triplets) {
  std::ofstream out(path);
  require(out.good(), "cannot open triplets file for writing: ", path.string());
  for (const auto& t : triplets)
    out << json{{"ref", t.ref},
                {"feedback", t.feedback},
                {"target", t.target},
                {"category", to_string(t.category)}}
               .dump()
        << "\n";
}

// ---------------------------------------------------------------------------
// Chaining

// Every simple path t_a -> t_b -> ... (target of one triplet = reference of
// the next, same category, no image revisited) whose image count falls in
// [min_images, max_images]. Output is sorted by the constituent triplet
// index tuples, so derivation is reproducible byte for byte.
inline std::vector<Session> chain_triplets(const std::vector<Triplet>& triplets,
                                           int min_images, int max_images) {
  require(min_images >= 3, "min_images must be at least 3");
  require(max_images <= 5, "max_images must be at most 5");
  require(min_images <= max_images, "min_images exceeds max_images");

  std::unordered_map<std::string, std::vector<int>> by_ref;
  for (int i = 0; i < static_cast<int>(triplets.size()); ++i)
    by_ref[triplets[i].ref].push_back(i);
  for (auto& [_, v] : by_ref) std::sort(v.begin(), v.end());

  std::vector<std::vector<int>> paths;
  std::vector<int> path;
  std::unordered_set<std::string> visited;

  std::function<void(int)> extend = [&](int idx) {
    const Triplet& t = triplets[idx];
    path.push_back(idx);
    visited.insert(t.target);
    const int images = static_cast<int>(path.size()) + 1;
    if (images >= min_images && images <= max_images) paths.push_back(path);
    if (images < max_images) {
      auto it = by_ref.find(t.target);
      if (it != by_ref.end()) {
        for (int next : it->second) {
          const Triplet& nt = triplets[next];
          if (nt.category != t.category) continue;
          if (visited.count(nt.target)) continue;
          extend(next);
        }
      }
    }
    visited.erase(t.target);
    path.pop_back();
  };

  for (int i = 0; i < static_cast<int>(triplets.size()); ++i) {
    visited.clear();
    visited.insert(triplets[i].ref);
    extend(i);
  }

  std::sort(paths.begin(), paths.end());

  std::vector<Session> sessions;
  sessions.reserve(paths.size());
  for (const auto& p : paths) {
    Session s;
    s.category = triplets[p.front()].category;
    std::string id = "drv";
    for (int idx : p) id += strf("-", idx);
    s.session_id = id;
    for (int idx : p)
      s.turns.push_back({triplets[idx].ref, triplets[idx].feedback});
    s.target_image_id = triplets[p.back()].target;
    sessions.push_back(std::move(s));
  }
  return sessions;
}

// ---------------------------------------------------------------------------
// Filters

enum class Verdict { kept, duplicate, circle, conflict, inconsistency_flag };

inline const char* to_string(Verdict v) {
  switch (v) {
    case Verdict::kept: return "kept";
    case Verdict::duplicate: return "duplicate";
    case Verdict::circle: return "circle";
    case Verdict::conflict: return "conflict";
    case Verdict::inconsistency_flag: return "inconsistency-flag";
  }
  return "?";
}

struct FilterEvidence {
  std::string session_id;
  Verdict verdict = Verdict::kept;
  std::string detail;
};

struct FilterResult {
  std::vector<Session> kept;
  std::vector<Session> removed;
  std::vector<FilterEvidence> evidence;  // one entry per removed session
};

using PixelHashFn = std::function<std::uint64_t(const std::string&)>;

// Removes sessions with two consecutive identical images (by id, and by
// pixel hash when a hash function is supplied).
inline FilterResult filter_duplicates(const std::vector<Session>& sessions,
                                      const PixelHashFn& hash = nullptr) {
  FilterResult r;
  for (const auto& s : sessions) {
    const auto ids = s.all_image_ids();
    std::string hit;
    for (std::size_t i = 1; i < ids.size() && hit.empty(); ++i) {
      if (ids[i] == ids[i - 1])
        hit = strf("consecutive image '", ids[i], "'");
      else if (hash && hash(ids[i]) == hash(ids[i - 1]))
        hit = strf("pixel-identical images '", ids[i - 1], "' and '", ids[i],
                   "'");
    }
    if (hit.empty()) {
      r.kept.push_back(s);
    } else {
      r.removed.push_back(s);
      r.evidence.push_back({s.session_id, Verdict::duplicate, hit});
    }
  }
  return r;
}

// Removes sessions where any image id occurs more than once anywhere,
// target included.
inline FilterResult filter_circles(const std::vector<Session>& sessions) {
  FilterResult r;
  for (const auto& s : sessions) {
    std::unordered_set<std::string> seen;
    std::string hit;
    for (const auto& id : s.all_image_ids())
      if (!seen.insert(id).second) {
        hit = strf("image '", id, "' occurs twice");
        break;
      }
    if (hit.empty()) {
      r.kept.push_back(s);
    } else {
      r.removed.push_back(s);
      r.evidence.push_back({s.session_id, Verdict::circle, hit});
    }
  }
  return r;
}

struct AntonymLexicon {
  std::vector<std::pair<Phrase, Phrase>> pairs;

  void add(const std::string& a, const std::string& b) {
    Phrase pa = tokenize(a), pb = tokenize(b);
    require(!pa.empty() && !pb.empty(), "empty phrase in antonym pair");
    pairs.emplace_back(std::move(pa), std::move(pb));
  }
};

// File format: `phraseA<TAB>phraseB` per line; '#' starts a comment.
inline AntonymLexicon load_antonym_lexicon(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), "cannot open antonym lexicon: ", path.string());
  AntonymLexicon lex;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    require(tab != std::string::npos && tab > 0 && tab + 1 < line.size(),
            path.string(), ":", lineno, ": expected 'phraseA<TAB>phraseB'");
    lex.add(line.substr(0, tab), line.substr(tab + 1));
  }
  return lex;
}

inline AntonymLexicon default_antonym_lexicon() {
  AntonymLexicon lex;
  const char* pairs[][2] = {
      {"long sleeves", "sleeveless"},   {"long sleeve", "sleeveless"},
      {"long sleeves", "short sleeves"},{"long sleeve", "short sleeve"},
      {"longer sleeves", "shorter sleeves"},
      {"longer", "shorter"},            {"darker", "lighter"},
      {"dark", "light"},                {"tighter", "looser"},
      {"tight", "loose"},               {"brighter", "duller"},
      {"bigger", "smaller"},            {"larger", "smaller"},
      {"wider", "narrower"},            {"thicker", "thinner"},
      {"higher neckline", "lower neckline"},
      {"high neck", "low neck"},        {"v neck", "round neck"},
      {"more colorful", "less colorful"},
      {"plain", "patterned"},           {"solid", "patterned"},
      {"with dots", "without dots"},    {"with stripes", "without stripes"},
      {"striped", "plain"},             {"dotted", "plain"},
      {"floral", "plain"},              {"longer dress", "shorter dress"},
      {"maxi", "mini"},                 {"fitted", "flowy"},
      {"casual", "formal"},             {"modern", "vintage"},
      {"shiny", "matte"},               {"heavier", "lighter weight"},
      {"opaque", "sheer"},              {"with collar", "collarless"},
      {"buttoned", "buttonless"},       {"with belt", "beltless"},
      {"more revealing", "less revealing"},
      {"strapless", "with straps"},     {"cropped", "full length"},
  };
  for (const auto& p : pairs) lex.add(p[0], p[1]);
  return lex;
}

namespace detail {

inline bool contains_phrase(const std::vector<std::string>& tokens,
                            const Phrase& phrase) {
  if (phrase.empty() || tokens.size() < phrase.size()) return false;
  for (std::size_t i = 0; i + phrase.size() <= tokens.size(); ++i) {
    bool all = true;
    for (std::size_t k = 0; k < phrase.size(); ++k)
      if (tokens[i + k] != phrase[k]) {
        all = false;
        break;
      }
    if (all) return true;
  }
  return false;
}

inline std::string phrase_to_string(const Phrase& p) {
  std::string s;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (i) s += ' ';
    s += p[i];
  }
  return s;
}

}  // namespace detail

// Removes sessions where one side of an antonym pair is asserted and the
// opposite side appears at a later turn with no intervening reassertion
// of the first side.
inline FilterResult filter_conflicts(const std::vector<Session>& sessions,
                                     const AntonymLexicon& lexicon) {
  FilterResult r;
  for (const auto& s : sessions) {
    std::vector<std::vector<std::string>> toks;
    toks.reserve(s.turns.size());
    for (const auto& t : s.turns) toks.push_back(tokenize(t.feedback));

    std::string hit;
    for (const auto& [a, b] : lexicon.pairs) {
      // -1 none, 0 side a, 1 side b; same-turn double assertion is ignored.
      int last_side = -1;
      std::size_t last_turn = 0;
      for (std::size_t i = 0; i < toks.size() && hit.empty(); ++i) {
        const bool has_a = detail::contains_phrase(toks[i], a);
        const bool has_b = detail::contains_phrase(toks[i], b);
        if (has_a && has_b) continue;
        const int side = has_a ? 0 : has_b ? 1 : -1;
        if (side < 0) continue;
        if (last_side >= 0 && last_side != side)
          hit = strf("'", detail::phrase_to_string(last_side == 0 ? a : b),
                     "' at turn ", last_turn, " vs '",
                     detail::phrase_to_string(side == 0 ? a : b), "' at turn ",
                     i);
        last_side = side;
        last_turn = i;
      }
      if (!hit.empty()) break;
    }
    if (hit.empty()) {
      r.kept.push_back(s);
    } else {
      r.removed.push_back(s);
      r.evidence.push_back({s.session_id, Verdict::conflict, hit});
    }
  }
  return r;
}

using KeywordMap = std::unordered_map<std::string, std::string>;

// Keyword map where every token that appears in the catalog maps to
// itself; a sensible default for `flag_inconsistency`.
inline KeywordMap identity_keyword_map(const AttributeCatalog& catalog) {
  KeywordMap m;
  for (const auto& [_, set] : catalog.by_image)
    for (const auto& tok : set.token_set()) m.emplace(tok, tok);
  return m;
}

inline KeywordMap load_keyword_map(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), "cannot open keyword map: ", path.string());
  KeywordMap m;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    require(tab != std::string::npos && tab > 0 && tab + 1 < line.size(),
            path.string(), ":", lineno, ": expected 'keyword<TAB>attribute'");
    m[line.substr(0, tab)] = line.substr(tab + 1);
  }
  return m;
}

// Flags (never removes) sessions where a keyword asserted at turn i maps
// to an attribute token that is absent from every image after turn i,
// target included. Flagged sessions go to the review queue.
inline std::vector<FilterEvidence> flag_inconsistency(
    const std::vector<Session>& sessions, const AttributeCatalog& catalog,
    const KeywordMap& keywords) {
  std::vector<FilterEvidence> flags;
  for (const auto& s : sessions) {
    std::vector<std::unordered_set<std::string>> later_tokens(s.turns.size());
    // later_tokens[i]: attribute tokens of all images strictly after turn i.
    std::unordered_set<std::string> acc;
    auto add_image = [&](const std::string& id) {
      if (catalog.contains(id))
        for (const auto& tok : catalog.get(id).token_set()) acc.insert(tok);
    };
    add_image(s.target_image_id);
    for (int i = static_cast<int>(s.turns.size()) - 1; i >= 0; --i) {
      later_tokens[i] = acc;
      add_image(s.turns[i].image_id);
    }

    std::string hit;
    for (std::size_t i = 0; i < s.turns.size() && hit.empty(); ++i) {
      for (const auto& tok : tokenize(s.turns[i].feedback)) {
        auto it = keywords.find(tok);
        if (it == keywords.end()) continue;
        if (!later_tokens[i].count(it->second)) {
          hit = strf("keyword '", tok, "' (attribute '", it->second,
                     "') asserted at turn ", i,
                     " but absent from all later images");
          break;
        }
      }
    }
    if (!hit.empty())
      flags.push_back({s.session_id, Verdict::inconsistency_flag, hit});
  }
  return flags;
}

struct FilterPipelineResult {
  std::vector<Session> kept;  // flagged sessions stay in `kept`
  std::vector<Session> removed;
  std::vector<FilterEvidence> evidence;  // removals first, then flags
  std::map<Verdict, long> counts;        // sums to the input session count

  long count(Verdict v) const {
    auto it = counts.find(v);
    return it == counts.end() ? 0 : it->second;
  }
};

// duplicates -> circles -> conflicts, then the inconsistency flag pass.
// A session's verdict is the first filter that rejected it.
inline FilterPipelineResult run_filter_pipeline(
    const std::vector<Session>& sessions, const AntonymLexicon& lexicon,
    const AttributeCatalog* catalog = nullptr,
    const KeywordMap* keywords = nullptr, const PixelHashFn& hash = nullptr) {
  FilterPipelineResult out;
  FilterResult dup = filter_duplicates(sessions, hash);
  FilterResult circ = filter_circles(dup.kept);
  FilterResult conf = filter_conflicts(circ.kept, lexicon);
  out.kept = conf.kept;
  for (auto* stage : {&dup, &circ, &conf}) {
    for (auto& s : stage->removed) out.removed.push_back(std::move(s));
    for (auto& e : stage->evidence) {
      ++out.counts[e.verdict];
      out.evidence.push_back(std::move(e));
    }
  }
  long flagged = 0;
  if (catalog) {
    KeywordMap fallback;
    const KeywordMap* km = keywords;
    if (!km) {
      fallback = identity_keyword_map(*catalog);
      km = &fallback;
    }
    auto flags = flag_inconsistency(out.kept, *catalog, *km);
    flagged = static_cast<long>(flags.size());
    for (auto& f : flags) out.evidence.push_back(std::move(f));
  }
  out.counts[Verdict::inconsistency_flag] = flagged;
  out.counts[Verdict::kept] = static_cast<long>(out.kept.size()) - flagged;
  return out;
}

inline void save_review_queue(const std::filesystem::path& path,
                              const std::vector<FilterEvidence>& evidence) {
  std::ofstream out(path);
  require(out.good(), "cannot open review queue for writing: ", path.string());
  for (const auto& e : evidence)
    out << json{{"session_id", e.session_id},
                {"verdict", to_string(e.verdict)},
                {"detail", e.detail}}
               .dump()
        << "\n";
}

// ---------------------------------------------------------------------------
// Dataset statistics

struct DatasetStats {
  struct Row {
    std::array<long, 3> sessions_by_images{};  // 3, 4, 5 images
    long total_sessions = 0;
    long total_images = 0;  // distinct
  };
  std::map<Category, Row> per_category;
  Row total;
  double mean_feedback_words = 0.0;

  json to_json() const {
    auto row_json = [](const Row& r) {
      return json{{"sessions_3_turn", r.sessions_by_images[0]},
                  {"sessions_4_turn", r.sessions_by_images[1]},
                  {"sessions_5_turn", r.sessions_by_images[2]},
                  {"total_sessions", r.total_sessions},
                  {"total_images", r.total_images}};
    };
    json per = json::object();
    for (const auto& [cat, row] : per_category)
      per[to_string(cat)] = row_json(row);
    return json{{"per_category", per},
                {"total", row_json(total)},
                {"mean_feedback_words", mean_feedback_words}};
  }

  std::string render_table() const {
    std::ostringstream os;
    os << "Category | 3-turn | 4-turn | 5-turn | Total Sessions | Total Images\n";
    os << "---------|--------|--------|--------|----------------|-------------\n";
    auto row = [&](const std::string& name, const Row& r) {
      os << name << " | " << r.sessions_by_images[0] << " | "
         << r.sessions_by_images[1] << " | " << r.sessions_by_images[2]
         << " | " << r.total_sessions << " | " << r.total_images << "\n";
    };
    for (const auto& [cat, r] : per_category) row(to_string(cat), r);
    row("Total", total);
    os << "Mean feedback length: " << mean_feedback_words << " words\n";
    return os.str();
  }
};

// Counts use the image convention: a "3-turn" session has 3 images,
// i.e. 2 stored feedback turns plus the target.
inline DatasetStats dataset_stats(const std::vector<Session>& sessions) {
  DatasetStats stats;
  std::map<Category, std::unordered_set<std::string>> images;
  std::unordered_set<std::string> all_images;
  long total_words = 0, total_turns = 0;
  for (Category c : kCategories) stats.per_category[c];  // stable rows
  for (const auto& s : sessions) {
    auto& row = stats.per_category[s.category];
    const int imgs = s.image_count();
    if (imgs >= 3 && imgs <= 5) {
      ++row.sessions_by_images[imgs - 3];
      ++stats.total.sessions_by_images[imgs - 3];
    }
    ++row.total_sessions;
    ++stats.total.total_sessions;
    for (const auto& id : s.all_image_ids()) {
      images[s.category].insert(id);
      all_images.insert(id);
    }
    for (const auto& t : s.turns) {
      total_words += static_cast<long>(tokenize(t.feedback).size());
      ++total_turns;
    }
  }
  for (auto& [cat, row] : stats.per_category)
    row.total_images = static_cast<long>(images[cat].size());
  stats.total.total_images = static_cast<long>(all_images.size());
  stats.mean_feedback_words =
      total_turns > 0 ? static_cast<double>(total_words) / total_turns : 0.0;
  return stats;
}

}  // namespace mfir
