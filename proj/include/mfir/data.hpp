// SPDX-License-Identifier: Apache-2.0
//
// Canonical corpus directory loading and the tensor-level input
// preparation shared by training, evaluation, and retrieval.
//
// A corpus directory holds: manifest.json, attributes.json,
// embeddings.txt and images/ (plus triplets.jsonl for derivation).
#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mfir/corpus.hpp"
#include "mfir/encoders.hpp"
#include "mfir/scoring.hpp"
#include "mfir/text.hpp"

namespace mfir {

struct Dataset {
  ImageManifest manifest;
  std::map<std::string, Image> images;
  AttributeCatalog catalog;
  EmbeddingTable table;
  SpellLexicon spell;
  std::vector<Session> sessions;

  const Image& image(const std::string& id) const {
    auto it = images.find(id);
    require(it != images.end(), "image '", id, "' not loaded");
    return it->second;
  }
};

inline Dataset load_dataset(const std::filesystem::path& corpus_dir,
                            const std::filesystem::path& sessions_path,
                            int d_t,
                            const std::filesystem::path& spell_lexicon = {}) {
  Dataset d;
  d.manifest = load_manifest(corpus_dir / "manifest.json");
  d.catalog = load_attributes(corpus_dir / "attributes.json");
  d.table = load_embedding_table(corpus_dir / "embeddings.txt", d_t);
  for (const auto& [id, _] : d.manifest.entries)
    d.images[id] = load_image_record(d.manifest, id).pixels;

  std::unordered_set<std::string> vocab;
  for (const auto& [tok, _] : d.table.vectors) vocab.insert(tok);
  if (!spell_lexicon.empty())
    d.spell = load_spell_lexicon(spell_lexicon, vocab);
  else
    d.spell = make_spell_lexicon(vocab);

  if (!sessions_path.empty()) {
    SessionValidation v;
    v.manifest = &d.manifest;
    d.sessions = load_sessions(sessions_path, v);
    d.spell.frequency = count_feedback_tokens(d.sessions);
  }
  return d;
}

inline Eigen::MatrixXd embed_feedback(const Dataset& d,
                                      const std::string& text) {
  auto tokens = correct_spelling(tokenize(text), d.spell);
  return embed_sequence(tokens, d.table);
}

inline nn::Mat image_tensor_for(const Dataset& d, const std::string& image_id,
                                int input_size, Rng* augment_rng = nullptr,
                                const AugmentParams* augment = nullptr) {
  const Image& img = d.image(image_id);
  if (augment_rng && augment)
    return image_to_tensor(transform_image(img, *augment, *augment_rng),
                           input_size);
  return image_to_tensor(img, input_size);
}

inline SessionInput make_session_input(const Dataset& d, const Session& s,
                                       int input_size,
                                       Rng* augment_rng = nullptr,
                                       const AugmentParams* augment = nullptr) {
  SessionInput in;
  in.session_id = s.session_id;
  in.category = s.category;
  in.target_id = s.target_image_id;
  in.image_count = s.image_count();
  in.turns.reserve(s.turns.size());
  for (const auto& turn : s.turns) {
    TurnInput ti;
    ti.image_tensor =
        image_tensor_for(d, turn.image_id, input_size, augment_rng, augment);
    ti.tokens = embed_feedback(d, turn.feedback);
    require(ti.tokens.rows() > 0, "session '", s.session_id,
            "': feedback '", turn.feedback, "' tokenizes to nothing");
    in.turns.push_back(std::move(ti));
  }
  return in;
}

inline CandidateFeatures make_candidate_features(
    const Dataset& d, const std::string& image_id, int input_size,
    Rng* augment_rng = nullptr, const AugmentParams* augment = nullptr) {
  CandidateFeatures c;
  c.id = image_id;
  c.image_tensor =
      image_tensor_for(d, image_id, input_size, augment_rng, augment);
  if (d.catalog.contains(image_id)) {
    c.attributes = embed_attribute_set(d.catalog.get(image_id), d.table);
  } else {
    for (auto& a : c.attributes) a = Eigen::VectorXd::Zero(d.table.dim);
  }
  return c;
}

// All catalog images of one category: the evaluation candidate pool.
inline std::vector<CandidateFeatures> category_candidates(const Dataset& d,
                                                          Category cat,
                                                          int input_size) {
  std::vector<CandidateFeatures> out;
  for (const auto& id : d.manifest.ids_of_category(cat))
    out.push_back(make_candidate_features(d, id, input_size));
  return out;
}

struct SplitIndices {
  std::vector<int> train, val, test;
};

// Deterministic shuffle split. test_frac of zero aliases test to val.
inline SplitIndices split_sessions(std::size_t n, double train_frac,
                                   double val_frac, double test_frac,
                                   std::uint64_t seed) {
  require(train_frac > 0.0 && val_frac > 0.0,
          "split: train and val fractions must be positive");
  require(train_frac + val_frac + test_frac <= 1.0 + 1e-9,
          "split: fractions exceed 1");
  std::vector<int> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = static_cast<int>(i);
  Rng rng(seed);
  rng.shuffle(idx);
  SplitIndices s;
  const auto n_train = static_cast<std::size_t>(train_frac * n);
  const auto n_val = static_cast<std::size_t>(val_frac * n);
  for (std::size_t i = 0; i < n; ++i) {
    if (i < n_train)
      s.train.push_back(idx[i]);
    else if (i < n_train + n_val)
      s.val.push_back(idx[i]);
    else if (test_frac > 0.0)
      s.test.push_back(idx[i]);
  }
  if (test_frac <= 0.0) s.test = s.val;
  return s;
}

}  // namespace mfir
