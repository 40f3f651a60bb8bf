// SPDX-License-Identifier: Apache-2.0
//
// Corpus file formats: line-delimited session records, the per-image
// attribute catalog, pretrained-style word vector files and the image
// manifest. Loaders validate and report offending line numbers.
#pragma once

#include <Eigen/Core>

#include <array>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "json.hpp"
#include "mfir/core.hpp"
#include "mfir/image.hpp"
#include "mfir/tokenize.hpp"

namespace mfir {

using json = nlohmann::json;

enum class Category { dress, shirt, toptee };

inline const char* to_string(Category c) {
  switch (c) {
    case Category::dress: return "dress";
    case Category::shirt: return "shirt";
    case Category::toptee: return "toptee";
  }
  return "?";
}

inline Category category_from_string(const std::string& s) {
  if (s == "dress") return Category::dress;
  if (s == "shirt") return Category::shirt;
  if (s == "toptee") return Category::toptee;
  fail("unknown category '", s, "' (expected dress|shirt|toptee)");
}

inline const std::array<Category, 3> kCategories = {
    Category::dress, Category::shirt, Category::toptee};

struct ImageRecord {
  std::string image_id;
  Category category = Category::dress;
  Image pixels;
};

struct Turn {
  std::string image_id;  // reference image shown before this feedback
  std::string feedback;
};

struct Session {
  std::string session_id;
  Category category = Category::dress;
  std::vector<Turn> turns;
  std::string target_image_id;

  // Image count, the convention used in reported statistics
  // (reference images + target).
  int image_count() const { return static_cast<int>(turns.size()) + 1; }

  std::vector<std::string> all_image_ids() const {
    std::vector<std::string> ids;
    ids.reserve(turns.size() + 1);
    for (const auto& t : turns) ids.push_back(t.image_id);
    ids.push_back(target_image_id);
    return ids;
  }
};

inline const std::array<const char*, 5> kAttributeSlots = {
    "texture", "fabric", "shape", "part", "style"};

using Phrase = std::vector<std::string>;  // lowercase tokens

struct AttributeSet {
  std::array<std::vector<Phrase>, 5> slots;  // indexed like kAttributeSlots

  const std::vector<Phrase>& slot(int i) const { return slots[i]; }
  std::vector<Phrase>& slot(int i) { return slots[i]; }

  std::unordered_set<std::string> token_set() const {
    std::unordered_set<std::string> out;
    for (const auto& s : slots)
      for (const auto& p : s)
        for (const auto& tok : p) out.insert(tok);
    return out;
  }
};

class AttributeCatalog {
 public:
  std::map<std::string, AttributeSet> by_image;

  bool contains(const std::string& image_id) const {
    return by_image.count(image_id) > 0;
  }
  const AttributeSet& get(const std::string& image_id) const {
    auto it = by_image.find(image_id);
    require(it != by_image.end(), "attribute catalog: image_id '", image_id,
            "' not found");
    return it->second;
  }
};

struct EmbeddingTable {
  int dim = 0;
  std::unordered_map<std::string, Eigen::VectorXd> vectors;
  Eigen::VectorXd unk;  // returned for out-of-vocabulary tokens

  bool contains(const std::string& token) const {
    return vectors.count(token) > 0;
  }
  const Eigen::VectorXd& lookup(const std::string& token) const {
    auto it = vectors.find(token);
    return it == vectors.end() ? unk : it->second;
  }
};

struct ManifestEntry {
  std::string path;  // relative to the manifest's directory
  Category category = Category::dress;
};

struct ImageManifest {
  std::filesystem::path base_dir;
  std::map<std::string, ManifestEntry> entries;

  bool contains(const std::string& image_id) const {
    return entries.count(image_id) > 0;
  }
  std::vector<std::string> ids_of_category(Category c) const {
    std::vector<std::string> ids;
    for (const auto& [id, e] : entries)
      if (e.category == c) ids.push_back(id);
    return ids;
  }
};

// ---------------------------------------------------------------------------
// Sessions (line-delimited JSON)

struct SessionValidation {
  bool structural_only = false;  // skip circle/duplicate checks (filter input)
  int min_turns = 2;
  int max_turns = 4;
  const ImageManifest* manifest = nullptr;  // when set, image ids must resolve
};

namespace detail {

inline std::string session_invariant_error(const Session& s,
                                            const SessionValidation& v) {
  if (s.session_id.empty()) return "missing field 'session_id'";
  if (s.turns.empty()) return "missing field 'turns'";
  for (std::size_t i = 0; i < s.turns.size(); ++i) {
    const auto& t = s.turns[i];
    if (t.image_id.empty())
      return strf("turn ", i, ": missing field 'image_id'");
    std::string trimmed = t.feedback;
    trimmed.erase(0, trimmed.find_first_not_of(" \t\r\n"));
    if (trimmed.empty()) return strf("turn ", i, ": empty 'feedback'");
  }
  if (s.target_image_id.empty()) return "missing field 'target_image_id'";
  if (v.manifest) {
    for (const auto& id : s.all_image_ids())
      if (!v.manifest->contains(id))
        return strf("dangling image_id '", id, "'");
  }
  if (v.structural_only) return {};
  const int n = static_cast<int>(s.turns.size());
  if (n < v.min_turns || n > v.max_turns)
    return strf("turn count ", n, " outside [", v.min_turns, ", ",
                v.max_turns, "]");
  for (std::size_t i = 1; i < s.turns.size(); ++i)
    if (s.turns[i].image_id == s.turns[i - 1].image_id)
      return strf("duplicate consecutive image '", s.turns[i].image_id, "'");
  std::unordered_set<std::string> seen;
  for (const auto& id : s.all_image_ids())
    if (!seen.insert(id).second)
      return strf("image '", id, "' repeats within the session");
  return {};
}

}  // namespace detail

inline json session_to_json(const Session& s) {
  json turns = json::array();
  for (const auto& t : s.turns)
    turns.push_back({{"image_id", t.image_id}, {"feedback", t.feedback}});
  return json{{"session_id", s.session_id},
              {"category", to_string(s.category)},
              {"turns", std::move(turns)},
              {"target_image_id", s.target_image_id}};
}

inline Session session_from_json(const json& j) {
  Session s;
  require(j.is_object(), "session record is not a JSON object");
  auto fetch = [&](const char* key) -> const json& {
    auto it = j.find(key);
    require(it != j.end(), "missing field '", key, "'");
    return *it;
  };
  const json& sid = fetch("session_id");
  require(sid.is_string(), "field 'session_id' must be a string");
  s.session_id = sid.get<std::string>();
  const json& cat = fetch("category");
  require(cat.is_string(), "field 'category' must be a string");
  s.category = category_from_string(cat.get<std::string>());
  const json& turns = fetch("turns");
  require(turns.is_array(), "field 'turns' must be an array");
  for (const auto& tj : turns) {
    require(tj.is_object(), "turn entries must be objects");
    Turn t;
    auto img = tj.find("image_id");
    require(img != tj.end() && img->is_string(),
            "turn missing string field 'image_id'");
    t.image_id = img->get<std::string>();
    auto fb = tj.find("feedback");
    require(fb != tj.end() && fb->is_string(),
            "turn missing string field 'feedback'");
    t.feedback = fb->get<std::string>();
    s.turns.push_back(std::move(t));
  }
  const json& trg = fetch("target_image_id");
  require(trg.is_string(), "field 'target_image_id' must be a string");
  s.target_image_id = trg.get<std::string>();
  return s;
}

inline std::vector<Session> load_sessions(const std::filesystem::path& path,
                                          const SessionValidation& v = {}) {
  std::ifstream in(path);
  require(in.good(), "cannot open sessions file: ", path.string());
  std::vector<Session> out;
  std::vector<std::string> problems;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      json j = json::parse(line);
      Session s = session_from_json(j);
      std::string err = detail::session_invariant_error(s, v);
      if (!err.empty())
        problems.push_back(strf(path.string(), ":", lineno, ": ", err));
      else
        out.push_back(std::move(s));
    } catch (const json::exception& e) {
      problems.push_back(strf(path.string(), ":", lineno, ": ", e.what()));
    } catch (const Error& e) {
      problems.push_back(strf(path.string(), ":", lineno, ": ", e.what()));
    }
  }
  if (!problems.empty()) {
    std::string msg = strf(problems.size(), " invalid session record(s):");
    for (const auto& p : problems) msg += "\n  " + p;
    throw Error(msg);
  }
  return out;
}

inline void save_sessions(const std::filesystem::path& path,
                          const std::vector<Session>& sessions) {
  std::ofstream out(path);
  require(out.good(), "cannot open sessions file for writing: ", path.string());
  for (const auto& s : sessions) out << session_to_json(s).dump() << "\n";
  require(out.good(), "short write: ", path.string());
}

// ---------------------------------------------------------------------------
// Attribute catalog (single JSON object)

inline AttributeCatalog attribute_catalog_from_json(const json& j) {
  require(j.is_object(), "attributes file must be a JSON object");
  AttributeCatalog catalog;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& image_id = it.key();
    require(it.value().is_object(), "attributes for '", image_id,
            "' must be an object");
    AttributeSet set;
    for (auto slot_it = it.value().begin(); slot_it != it.value().end();
         ++slot_it) {
      int slot = -1;
      for (int i = 0; i < 5; ++i)
        if (slot_it.key() == kAttributeSlots[i]) slot = i;
      require(slot >= 0, "unknown attribute slot '", slot_it.key(), "' for '",
              image_id, "'");
      require(slot_it.value().is_array(), "slot '", slot_it.key(), "' of '",
              image_id, "' must be an array");
      for (const auto& phrase : slot_it.value()) {
        require(phrase.is_string(), "slot '", slot_it.key(), "' of '",
                image_id, "' contains a non-string phrase");
        Phrase tokens = tokenize(phrase.get<std::string>());
        require(!tokens.empty(), "slot '", slot_it.key(), "' of '", image_id,
                "' contains an empty phrase");
        set.slot(slot).push_back(std::move(tokens));
      }
    }
    catalog.by_image.emplace(image_id, std::move(set));
  }
  return catalog;
}

inline AttributeCatalog load_attributes(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), "cannot open attributes file: ", path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    fail(path.string(), ": ", e.what());
  }
  return attribute_catalog_from_json(j);
}

inline void save_attributes(const std::filesystem::path& path,
                            const AttributeCatalog& catalog) {
  json j = json::object();
  for (const auto& [id, set] : catalog.by_image) {
    json entry = json::object();
    for (int i = 0; i < 5; ++i) {
      json phrases = json::array();
      for (const auto& p : set.slot(i)) {
        std::string joined;
        for (std::size_t k = 0; k < p.size(); ++k) {
          if (k) joined += ' ';
          joined += p[k];
        }
        phrases.push_back(joined);
      }
      entry[kAttributeSlots[i]] = std::move(phrases);
    }
    j[id] = std::move(entry);
  }
  std::ofstream out(path);
  require(out.good(), "cannot open attributes file for writing: ",
          path.string());
  out << j.dump(1) << "\n";
}

// ---------------------------------------------------------------------------
// Word vectors (plain text: token v1 ... v_d per line)

inline EmbeddingTable load_embedding_table(const std::filesystem::path& path,
                                           int dim) {
  require(dim > 0, "embedding dimension must be positive");
  std::ifstream in(path);
  require(in.good(), "cannot open embeddings file: ", path.string());
  EmbeddingTable table;
  table.dim = dim;
  table.unk = Eigen::VectorXd::Zero(dim);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string token;
    ls >> token;
    require(!token.empty(), path.string(), ":", lineno, ": missing token");
    Eigen::VectorXd v(dim);
    int got = 0;
    double x;
    while (got < dim && (ls >> x)) v(got++) = x;
    double extra;
    require(got == dim && !(ls >> extra), path.string(), ":", lineno,
            ": expected ", dim, " values for token '", token, "', got ",
            got == dim ? strf("more") : strf(got));
    table.vectors[token] = std::move(v);
  }
  return table;
}

inline void save_embedding_table(const std::filesystem::path& path,
                                 const EmbeddingTable& table) {
  std::ofstream out(path);
  require(out.good(), "cannot open embeddings file for writing: ",
          path.string());
  out.precision(17);
  std::map<std::string, const Eigen::VectorXd*> ordered;
  for (const auto& [tok, v] : table.vectors) ordered[tok] = &v;
  for (const auto& [tok, v] : ordered) {
    out << tok;
    for (int i = 0; i < table.dim; ++i) out << ' ' << (*v)(i);
    out << "\n";
  }
}

// ---------------------------------------------------------------------------
// Image manifest (JSON: image_id -> {path, category})

inline ImageManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), "cannot open manifest: ", path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    fail(path.string(), ": ", e.what());
  }
  require(j.is_object(), path.string(), ": manifest must be a JSON object");
  ImageManifest m;
  m.base_dir = path.parent_path();
  for (auto it = j.begin(); it != j.end(); ++it) {
    require(it.value().is_object() && it.value().contains("path") &&
                it.value().contains("category"),
            path.string(), ": entry '", it.key(),
            "' must be {\"path\", \"category\"}");
    ManifestEntry e;
    e.path = it.value()["path"].get<std::string>();
    e.category = category_from_string(it.value()["category"].get<std::string>());
    m.entries.emplace(it.key(), std::move(e));
  }
  return m;
}

inline void save_manifest(const std::filesystem::path& path,
                          const ImageManifest& m) {
  json j = json::object();
  for (const auto& [id, e] : m.entries)
    j[id] = json{{"path", e.path}, {"category", to_string(e.category)}};
  std::ofstream out(path);
  require(out.good(), "cannot open manifest for writing: ", path.string());
  out << j.dump(1) << "\n";
}

// Loads pixels for one manifest entry. Enforces the minimum raster size.
inline ImageRecord load_image_record(const ImageManifest& m,
                                     const std::string& image_id) {
  auto it = m.entries.find(image_id);
  require(it != m.entries.end(), "image_id '", image_id,
          "' not in the manifest");
  ImageRecord rec;
  rec.image_id = image_id;
  rec.category = it->second.category;
  rec.pixels = read_image(m.base_dir / it->second.path);
  require(rec.pixels.width >= 16 && rec.pixels.height >= 16, "image '",
          image_id, "' is smaller than 16x16");
  return rec;
}

}  // namespace mfir
