// SPDX-License-Identifier: Apache-2.0
//
// Deterministic synthetic fashion micro-corpus: rendered garment rasters,
// a spec-derived attribute catalog, walk-sampled triplets with templated
// feedback, and a matching toy word-vector table. Everything is a pure
// function of the seed, so regenerated corpora are byte-identical.
#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "mfir/corpus.hpp"
#include "mfir/derivation.hpp"
#include "mfir/image.hpp"
#include "mfir/rng.hpp"

namespace mfir {

struct GarmentSpec {
  Category category = Category::dress;
  int color = 0;       // palette index
  int sleeve = 0;      // 0 none, 1 short, 2 long
  int pattern = 0;     // 0 plain, 1 stripes, 2 dots
  int brightness = 0;  // 0 light, 1 dark

  std::array<int, 4> fields() const {
    return {color, sleeve, pattern, brightness};
  }
  bool operator<(const GarmentSpec& o) const {
    return std::tie(category, color, sleeve, pattern, brightness) <
           std::tie(o.category, o.color, o.sleeve, o.pattern, o.brightness);
  }
};

namespace synth_detail {

struct PaletteEntry {
  const char* word;
  std::uint8_t r, g, b;
};

inline const std::array<PaletteEntry, 8>& palette() {
  static const std::array<PaletteEntry, 8> p = {{
      {"red", 200, 40, 40},
      {"blue", 40, 70, 200},
      {"green", 40, 170, 60},
      {"yellow", 220, 200, 40},
      {"purple", 140, 50, 180},
      {"orange", 230, 130, 30},
      {"pink", 235, 120, 170},
      {"teal", 30, 160, 160},
  }};
  return p;
}

inline const char* sleeve_word(int s) {
  return s == 0 ? "sleeveless" : s == 1 ? "short" : "long";
}
inline const char* pattern_word(int p) {
  return p == 0 ? "plain" : p == 1 ? "stripes" : "dots";
}
inline const char* brightness_word(int b) { return b == 0 ? "light" : "dark"; }

}  // namespace synth_detail

inline constexpr int kSynthImageSize = 64;

// Spec -> raster. Deterministic; no randomness involved.
inline Image render_garment(const GarmentSpec& spec) {
  using synth_detail::palette;
  const int S = kSynthImageSize;
  Image img(S, S, 255);

  const auto& pal = palette()[spec.color];
  double scale = spec.brightness == 0 ? 1.0 : 0.45;
  auto shade = [&](double f) {
    std::array<std::uint8_t, 3> c;
    const double base[3] = {double(pal.r), double(pal.g), double(pal.b)};
    for (int i = 0; i < 3; ++i) {
      double v = base[i] * scale * f;
      if (spec.brightness == 0) v = v * 0.7 + 255.0 * 0.3;  // washed light
      c[i] = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
    }
    return c;
  };

  std::vector<char> body(static_cast<std::size_t>(S) * S, 0);
  auto mark = [&](int y0, int y1, int x0, int x1) {
    for (int y = y0; y < y1; ++y)
      for (int x = x0; x < x1; ++x) body[static_cast<std::size_t>(y) * S + x] = 1;
  };

  switch (spec.category) {
    case Category::dress: {
      mark(10, 28, 24, 40);  // bodice
      for (int y = 28; y < 56; ++y) {
        const int spread = (y - 28) / 3;
        mark(y, y + 1, std::max(16, 24 - spread), std::min(48, 40 + spread));
      }
      break;
    }
    case Category::shirt: {
      mark(12, 46, 20, 44);
      mark(8, 12, 28, 36);  // collar
      break;
    }
    case Category::toptee: {
      mark(14, 38, 22, 42);
      break;
    }
  }
  // sleeves hang from the shoulders
  if (spec.sleeve >= 1) {
    const int y1 = spec.sleeve == 1 ? 26 : 46;
    mark(12, y1, 12, 20);
    mark(12, y1, 44, 52);
  }

  for (int y = 0; y < S; ++y) {
    for (int x = 0; x < S; ++x) {
      if (!body[static_cast<std::size_t>(y) * S + x]) continue;
      double f = 1.0;
      if (spec.pattern == 1 && (x / 4) % 2 == 0) f = 0.55;  // stripes
      if (spec.pattern == 2) {
        const int dx = x % 8 - 4, dy = y % 8 - 4;
        if (dx * dx + dy * dy <= 3) f = 0.45;  // dots
      }
      auto c = shade(f);
      img.at(y, x, 0) = c[0];
      img.at(y, x, 1) = c[1];
      img.at(y, x, 2) = c[2];
    }
  }
  return img;
}

inline AttributeSet attributes_for(const GarmentSpec& spec) {
  using namespace synth_detail;
  AttributeSet a;
  a.slot(0).push_back({pattern_word(spec.pattern)});           // texture
  a.slot(1).push_back({palette()[spec.color].word});           // fabric color
  a.slot(2).push_back({std::string(to_string(spec.category))});  // shape
  if (spec.sleeve == 0)
    a.slot(3).push_back({"sleeveless"});
  else
    a.slot(3).push_back({sleeve_word(spec.sleeve), "sleeves"});  // part
  a.slot(4).push_back({brightness_word(spec.brightness)});       // style
  return a;
}

// Feedback clause describing the new value of one changed field.
inline std::string feedback_clause(int field, const GarmentSpec& to, Rng& rng) {
  using namespace synth_detail;
  switch (field) {
    case 0:
      return rng.bernoulli(0.5)
                 ? strf("is ", palette()[to.color].word)
                 : strf("is ", palette()[to.color].word, " colored");
    case 1:
      if (to.sleeve == 0) return "is sleeveless";
      return strf("has ", sleeve_word(to.sleeve), " sleeves");
    case 2:
      if (to.pattern == 0) return "is plain";
      return strf("has ", pattern_word(to.pattern));
    default:
      return to.brightness == 1 ? "is darker" : "is lighter";
  }
}

struct SynthCorpus {
  std::map<std::string, Image> images;
  std::map<std::string, GarmentSpec> specs;
  ImageManifest manifest;  // paths relative to the corpus directory
  AttributeCatalog catalog;
  std::vector<Triplet> triplets;
  EmbeddingTable table;
};

namespace synth_detail {

inline std::vector<std::string> vocabulary() {
  std::vector<std::string> v = {"is",     "has",     "and",   "colored",
                                "sleeveless", "short",   "long",  "sleeves",
                                "plain",  "stripes", "dots",  "darker",
                                "lighter", "light",   "dark",  "dress",
                                "shirt",  "toptee"};
  for (const auto& p : palette()) v.push_back(p.word);
  return v;
}

inline EmbeddingTable make_table(int dim, std::uint64_t seed) {
  EmbeddingTable t;
  t.dim = dim;
  t.unk = Eigen::VectorXd::Zero(dim);
  for (const auto& word : vocabulary()) {
    Rng rng(seed ^ fnv1a64(word));
    Eigen::VectorXd v(dim);
    for (int i = 0; i < dim; ++i)
      v(i) = rng.normal() / std::sqrt(static_cast<double>(dim));
    t.vectors[word] = std::move(v);
  }
  return t;
}

}  // namespace synth_detail

struct SynthParams {
  int n_images = 200;
  std::uint64_t seed = 7;
  int embedding_dim = 24;
  double misspell_prob = 0.05;  // feeds the spell corrector something to do
  int walks_per_image_x100 = 55;  // walks per category = n_cat * this / 100
};

inline SynthCorpus generate_corpus(const SynthParams& params) {
  require(params.n_images >= 20, "synth corpus needs at least 20 images");
  Rng rng(params.seed);
  SynthCorpus out;
  out.table = synth_detail::make_table(params.embedding_dim, params.seed);

  const std::map<std::string, std::string> misspellings = {
      {"sleeves", "sleves"}, {"stripes", "stipes"}, {"darker", "darkr"},
      {"colored", "colered"}};

  for (int ci = 0; ci < 3; ++ci) {
    const Category cat = kCategories[ci];
    const int n_cat = params.n_images / 3 + (ci < params.n_images % 3 ? 1 : 0);

    // all combos, shuffled; specs within a category are distinct
    std::vector<GarmentSpec> combos;
    for (int color = 0; color < 8; ++color)
      for (int sleeve = 0; sleeve < 3; ++sleeve)
        for (int pattern = 0; pattern < 3; ++pattern)
          for (int brightness = 0; brightness < 2; ++brightness)
            combos.push_back({cat, color, sleeve, pattern, brightness});
    require(n_cat <= static_cast<int>(combos.size()),
            "synth corpus: at most ", combos.size() * 3, " images supported");
    rng.shuffle(combos);
    combos.resize(n_cat);

    std::vector<std::string> ids;
    for (int i = 0; i < n_cat; ++i) {
      std::string id = strf("img-", to_string(cat), "-",
                            i < 10 ? "00" : i < 100 ? "0" : "", i);
      out.images[id] = render_garment(combos[i]);
      out.specs[id] = combos[i];
      out.manifest.entries[id] = {strf("images/", id, ".png"), cat};
      out.catalog.by_image[id] = attributes_for(combos[i]);
      ids.push_back(id);
    }

    // Walks: simple paths in spec space; each field changes at most once
    // per walk so a walk never contradicts itself.
    const int n_walks = std::max(6, n_cat * params.walks_per_image_x100 / 100);
    for (int w = 0; w < n_walks; ++w) {
      const double rr = rng.uniform();
      const int edges = rr < 0.70 ? 2 : rr < 0.92 ? 3 : 4;
      // distribute the 4 fields over the edges, >= 1 each
      std::vector<int> per_edge(edges, 1);
      int extra = 4 - edges;
      while (extra > 0) {
        const int e = static_cast<int>(rng.below(edges));
        if (per_edge[e] < 2) {
          ++per_edge[e];
          --extra;
        }
      }

      std::string cur = ids[rng.below(ids.size())];
      std::vector<std::string> in_walk = {cur};
      std::array<bool, 4> used{};
      for (int e = 0; e < edges; ++e) {
        const GarmentSpec cur_spec = out.specs[cur];
        // next image: differs from the current spec only in fields this
        // walk has not touched yet, preferring the planned delta size
        auto diff_fields = [&](const GarmentSpec& other) {
          std::vector<int> d;
          const auto a = cur_spec.fields(), b = other.fields();
          for (int f = 0; f < 4; ++f)
            if (a[f] != b[f]) d.push_back(f);
          return d;
        };
        std::vector<std::string> preferred, fallback;
        for (const auto& id : ids) {
          if (std::find(in_walk.begin(), in_walk.end(), id) != in_walk.end())
            continue;
          const auto d = diff_fields(out.specs[id]);
          if (d.empty() || d.size() > 2) continue;
          bool clean = true;
          for (int f : d) clean = clean && !used[f];
          if (!clean) continue;
          if (static_cast<int>(d.size()) == per_edge[e])
            preferred.push_back(id);
          else
            fallback.push_back(id);
        }
        const auto& pool = preferred.empty() ? fallback : preferred;
        if (pool.empty()) break;
        const std::string next_id = pool[rng.below(pool.size())];
        const GarmentSpec next = out.specs[next_id];
        auto changed = diff_fields(next);
        for (int f : changed) used[f] = true;

        std::string feedback;
        for (std::size_t k = 0; k < changed.size(); ++k) {
          if (k) feedback += " and ";
          feedback += feedback_clause(changed[k], next, rng);
        }
        // occasionally misspell a word the corrector can recover
        if (rng.bernoulli(params.misspell_prob)) {
          for (const auto& [good, bad] : misspellings) {
            const auto pos = feedback.find(good);
            if (pos != std::string::npos) {
              feedback = feedback.substr(0, pos) + bad +
                         feedback.substr(pos + good.size());
              break;
            }
          }
        }
        out.triplets.push_back({cur, feedback, next_id, cat});
        cur = next_id;
        in_walk.push_back(cur);
      }
    }
  }
  return out;
}

inline void write_corpus(const std::filesystem::path& dir,
                         const SynthCorpus& corpus) {
  std::filesystem::create_directories(dir / "images");
  for (const auto& [id, img] : corpus.images)
    write_png(dir / "images" / (id + ".png"), img);
  save_manifest(dir / "manifest.json", corpus.manifest);
  save_attributes(dir / "attributes.json", corpus.catalog);
  save_embedding_table(dir / "embeddings.txt", corpus.table);
  save_triplets(dir / "triplets.jsonl", corpus.triplets);
}

}  // namespace mfir
