// SPDX-License-Identifier: Apache-2.0
//
// One JSON config file drives dimensions, encoders, augmentation,
// training, splits and the fusion search; CLI flags override fields.
#pragma once

#include <filesystem>
#include <fstream>
#include <string>

#include "json.hpp"
#include "mfir/attribute.hpp"
#include "mfir/comparative.hpp"
#include "mfir/composite.hpp"
#include "mfir/fusion.hpp"
#include "mfir/training.hpp"

namespace mfir {

struct Config {
  int d_t = 300;
  int d_p = 512;
  int d_h = 0;  // composite recurrent width (0 -> d_p)
  int d_m = 0;  // comparative recurrent width (0 -> d_t)
  int d_b = 0;  // attribute per-direction width (0 -> d_t)
  std::string composer = "gated-residual";
  ImageEncoderConfig image;
  TextEncoderConfig text;
  TrainConfig training;
  FusionSearchConfig fusion;
  double train_frac = 0.7;
  double val_frac = 0.3;
  double test_frac = 0.0;
  std::uint64_t seed = 1;
  int threads = 2;
  std::string spell_lexicon;  // optional path

  json to_json() const {
    return json{
        {"dims",
         {{"d_t", d_t}, {"d_p", d_p}, {"d_h", d_h}, {"d_m", d_m}, {"d_b", d_b}}},
        {"composer", composer},
        {"image_encoder",
         {{"arch", image.arch}, {"input_size", image.input_size}}},
        {"text_encoder",
         {{"blocks", text.blocks},
          {"heads", text.heads},
          {"ffn_hidden", text.ffn_hidden}}},
        {"augment",
         {{"flip_prob", training.augment.flip_prob},
          {"max_rotation_deg", training.augment.max_rotation_deg},
          {"max_translate_frac", training.augment.max_translate_frac},
          {"scale_lo", training.augment.scale_lo},
          {"scale_hi", training.augment.scale_hi},
          {"enabled", training.augment_images}}},
        {"training",
         {{"epochs", training.epochs},
          {"lr", training.lr},
          {"margin", training.margin},
          {"batch_size", training.batch_size},
          {"seed", training.seed}}},
        {"fusion",
         {{"objective", to_string(fusion.objective)},
          {"budget", fusion.budget},
          {"seed", fusion.seed},
          {"iterative_refusion", fusion.iterative_refusion}}},
        {"split",
         {{"train", train_frac}, {"val", val_frac}, {"test", test_frac}}},
        {"seed", seed},
        {"threads", threads},
        {"spell_lexicon", spell_lexicon}};
  }

  static Config from_json(const json& j) {
    Config c;
    if (j.contains("dims")) {
      const auto& d = j["dims"];
      c.d_t = d.value("d_t", c.d_t);
      c.d_p = d.value("d_p", c.d_p);
      c.d_h = d.value("d_h", c.d_h);
      c.d_m = d.value("d_m", c.d_m);
      c.d_b = d.value("d_b", c.d_b);
    }
    c.composer = j.value("composer", c.composer);
    if (j.contains("image_encoder")) {
      const auto& e = j["image_encoder"];
      c.image.arch = e.value("arch", c.image.arch);
      c.image.input_size = e.value("input_size", c.image.input_size);
    }
    if (j.contains("text_encoder")) {
      const auto& e = j["text_encoder"];
      c.text.blocks = e.value("blocks", c.text.blocks);
      c.text.heads = e.value("heads", c.text.heads);
      c.text.ffn_hidden = e.value("ffn_hidden", c.text.ffn_hidden);
    }
    if (j.contains("augment")) {
      const auto& a = j["augment"];
      c.training.augment.flip_prob =
          a.value("flip_prob", c.training.augment.flip_prob);
      c.training.augment.max_rotation_deg =
          a.value("max_rotation_deg", c.training.augment.max_rotation_deg);
      c.training.augment.max_translate_frac =
          a.value("max_translate_frac", c.training.augment.max_translate_frac);
      c.training.augment.scale_lo =
          a.value("scale_lo", c.training.augment.scale_lo);
      c.training.augment.scale_hi =
          a.value("scale_hi", c.training.augment.scale_hi);
      c.training.augment_images = a.value("enabled", c.training.augment_images);
    }
    if (j.contains("training")) {
      const auto& t = j["training"];
      c.training.epochs = t.value("epochs", c.training.epochs);
      c.training.lr = t.value("lr", c.training.lr);
      c.training.margin = t.value("margin", c.training.margin);
      c.training.batch_size = t.value("batch_size", c.training.batch_size);
      c.training.seed = t.value("seed", c.training.seed);
    }
    if (j.contains("fusion")) {
      const auto& f = j["fusion"];
      c.fusion.objective =
          objective_from_string(f.value("objective", "r@5"));
      c.fusion.budget = f.value("budget", c.fusion.budget);
      c.fusion.seed = f.value("seed", c.fusion.seed);
      c.fusion.iterative_refusion =
          f.value("iterative_refusion", c.fusion.iterative_refusion);
    }
    if (j.contains("split")) {
      const auto& s = j["split"];
      c.train_frac = s.value("train", c.train_frac);
      c.val_frac = s.value("val", c.val_frac);
      c.test_frac = s.value("test", c.test_frac);
    }
    c.seed = j.value("seed", c.seed);
    c.threads = j.value("threads", c.threads);
    c.spell_lexicon = j.value("spell_lexicon", c.spell_lexicon);
    return c;
  }

  static Config load(const std::filesystem::path& path) {
    std::ifstream in(path);
    require(in.good(), "cannot open config: ", path.string());
    json j;
    try {
      in >> j;
    } catch (const json::exception& e) {
      fail(path.string(), ": ", e.what());
    }
    return from_json(j);
  }

  CompositeConfig composite_config() const {
    CompositeConfig c;
    c.d_p = d_p;
    c.d_t = d_t;
    c.d_h = d_h;
    c.composer = composer_from_string(composer);
    c.image = image;
    c.text = text;
    return CompositeScorer::normalized(c);
  }

  ComparativeConfig comparative_config() const {
    ComparativeConfig c;
    c.d_p = d_p;
    c.d_t = d_t;
    c.d_m = d_m;
    c.image = image;
    c.text = text;
    return ComparativeScorer::normalized(c);
  }

  AttributeConfig attribute_config() const {
    AttributeConfig c;
    c.d_t = d_t;
    c.d_b = d_b;
    return c;
  }

  // Structural fingerprint per module: the fields that determine
  // parameter shapes and scoring semantics.
  std::uint64_t module_config_hash(const std::string& module_id) const {
    json j;
    if (module_id == "composite") {
      j = json{{"d_p", d_p},         {"d_t", d_t},
               {"d_h", d_h},         {"composer", composer},
               {"arch", image.arch}, {"input_size", image.input_size},
               {"blocks", text.blocks}, {"heads", text.heads},
               {"ffn", text.ffn_hidden}};
    } else if (module_id == "comparative") {
      j = json{{"d_p", d_p},         {"d_t", d_t},
               {"d_m", d_m},         {"arch", image.arch},
               {"input_size", image.input_size}, {"blocks", text.blocks},
               {"heads", text.heads}, {"ffn", text.ffn_hidden}};
    } else if (module_id == "attribute") {
      j = json{{"d_t", d_t}, {"d_b", d_b}};
    } else {
      fail("unknown module '", module_id, "'");
    }
    return fnv1a64(j.dump());
  }

  std::unique_ptr<ScoringModule> make_module(const std::string& module_id) const {
    Rng rng(seed ^ fnv1a64(module_id));
    if (module_id == "composite")
      return std::make_unique<CompositeScorer>(composite_config(), rng);
    if (module_id == "comparative")
      return std::make_unique<ComparativeScorer>(comparative_config(), rng);
    if (module_id == "attribute")
      return std::make_unique<AttributeScorer>(attribute_config(), rng);
    fail("unknown module '", module_id,
         "' (expected composite|comparative|attribute)");
  }
};

}  // namespace mfir
