// SPDX-License-Identifier: Apache-2.0
//
// mfir: multiturn fashion image retrieval pipeline.
//
// Subcommands cover the whole flow: synth-corpus -> derive -> filter ->
// stats -> train (x3) -> fuse-weights -> build-index -> evaluate ->
// retrieve. A run directory collects checkpoints, cached score matrices,
// fusion weights, the index and reports.
#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "mfir/config.hpp"
#include "mfir/data.hpp"
#include "mfir/derivation.hpp"
#include "mfir/evaluate.hpp"
#include "mfir/synth.hpp"
#include "mfir/training.hpp"

namespace fs = std::filesystem;
using namespace mfir;

namespace {

struct Common {
  std::string config_path;

  Config load() const {
    return config_path.empty() ? Config{} : Config::load(config_path);
  }
};

void write_text_file(const fs::path& path, const std::string& text) {
  if (!path.parent_path().empty()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  require(out.good(), "cannot open for writing: ", path.string());
  out << text;
}

fs::path checkpoint_base(const fs::path& run_dir, const std::string& module) {
  return run_dir / "checkpoints" / module;
}

struct LoadedModules {
  std::unique_ptr<CompositeScorer> composite;
  std::unique_ptr<ComparativeScorer> comparative;
  std::unique_ptr<AttributeScorer> attribute;
};

LoadedModules load_trained_modules(const Config& config,
                                   const fs::path& run_dir) {
  LoadedModules m;
  m.composite = std::make_unique<CompositeScorer>(
      config.composite_config(), Rng(config.seed ^ fnv1a64("composite")));
  m.comparative = std::make_unique<ComparativeScorer>(
      config.comparative_config(), Rng(config.seed ^ fnv1a64("comparative")));
  m.attribute = std::make_unique<AttributeScorer>(
      config.attribute_config(), Rng(config.seed ^ fnv1a64("attribute")));
  for (auto* mod : std::initializer_list<ScoringModule*>{
           m.composite.get(), m.comparative.get(), m.attribute.get()}) {
    auto ckpt = ModelCheckpoint::load(checkpoint_base(run_dir, mod->module_id()));
    apply_checkpoint(*mod, ckpt, config.module_config_hash(mod->module_id()));
  }
  return m;
}

std::vector<int> pick_split(const Config& config, std::size_t n_sessions,
                            const std::string& which) {
  auto split = split_sessions(n_sessions, config.train_frac, config.val_frac,
                              config.test_frac, config.seed);
  if (which == "val") return split.val;
  if (which == "test") return split.test;
  if (which == "train") return split.train;
  fail("unknown split '", which, "' (expected train|val|test)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multiturn conversational fashion image retrieval"};
  app.require_subcommand(1);
  app.fallthrough();  // accept --config after the subcommand too
  Common common;
  app.add_option("--config", common.config_path, "global JSON config file")
      ->check(CLI::ExistingFile);

  // ---- synth-corpus ----
  auto* synth = app.add_subcommand(
      "synth-corpus", "generate the synthetic micro-corpus");
  SynthParams synth_params;
  std::string synth_out;
  synth->add_option("--n-images", synth_params.n_images, "image count")
      ->default_val(200);
  synth->add_option("--seed", synth_params.seed, "generator seed")
      ->default_val(7);
  synth->add_option("--d-t", synth_params.embedding_dim,
                    "toy embedding dimension")
      ->default_val(24);
  synth->add_option("--misspell-prob", synth_params.misspell_prob,
                    "probability of injecting a recoverable misspelling");
  synth->add_option("--out", synth_out, "output corpus directory")->required();
  synth->callback([&]() {
    auto corpus = generate_corpus(synth_params);
    fs::create_directories(synth_out);
    write_corpus(synth_out, corpus);
    std::cout << "wrote " << corpus.images.size() << " images, "
              << corpus.triplets.size() << " triplets to " << synth_out
              << "\n";
  });

  // ---- derive ----
  auto* derive = app.add_subcommand("derive",
                                    "chain triplets into multiturn sessions");
  std::string derive_triplets, derive_out;
  int min_imgs = 3, max_imgs = 5;
  derive->add_option("--triplets", derive_triplets, "triplets jsonl")
      ->required()
      ->check(CLI::ExistingFile);
  derive->add_option("--min-imgs", min_imgs, "minimum images per session");
  derive->add_option("--max-imgs", max_imgs, "maximum images per session");
  derive->add_option("--out", derive_out, "output sessions jsonl")->required();
  derive->callback([&]() {
    auto triplets = load_triplets(derive_triplets);
    auto sessions = chain_triplets(triplets, min_imgs, max_imgs);
    save_sessions(derive_out, sessions);
    std::cout << "derived " << sessions.size() << " sessions from "
              << triplets.size() << " triplets\n";
  });

  // ---- filter ----
  auto* filter = app.add_subcommand("filter", "screen problematic sessions");
  std::string f_sessions, f_out, f_attrs, f_lexicon, f_keywords, f_queue,
      f_corpus;
  bool f_pixel_hash = false;
  filter->add_option("--sessions", f_sessions, "input sessions jsonl")
      ->required()
      ->check(CLI::ExistingFile);
  filter->add_option("--out", f_out, "kept sessions jsonl")->required();
  filter->add_option("--attrs", f_attrs, "attribute catalog JSON")
      ->check(CLI::ExistingFile);
  filter->add_option("--lexicon", f_lexicon,
                     "antonym lexicon (extends the built-in pairs)")
      ->check(CLI::ExistingFile);
  filter->add_option("--keywords", f_keywords,
                     "keyword map for the inconsistency flag")
      ->check(CLI::ExistingFile);
  filter->add_option("--review-queue", f_queue, "review queue jsonl");
  filter->add_option("--corpus", f_corpus,
                     "corpus dir (enables pixel-hash duplicate detection)");
  filter->add_flag("--pixel-hash", f_pixel_hash,
                   "also compare image bytes for duplicates");
  filter->callback([&]() {
    SessionValidation lax;
    lax.structural_only = true;
    auto sessions = load_sessions(f_sessions, lax);

    AntonymLexicon lexicon = default_antonym_lexicon();
    if (!f_lexicon.empty()) {
      auto extra = load_antonym_lexicon(f_lexicon);
      for (auto& p : extra.pairs) lexicon.pairs.push_back(std::move(p));
    }
    std::optional<AttributeCatalog> catalog;
    std::optional<KeywordMap> keywords;
    if (!f_attrs.empty()) catalog = load_attributes(f_attrs);
    if (!f_keywords.empty()) keywords = load_keyword_map(f_keywords);

    PixelHashFn hash;
    std::map<std::string, Image> images;
    if (f_pixel_hash) {
      require(!f_corpus.empty(), "--pixel-hash needs --corpus");
      auto manifest = load_manifest(fs::path(f_corpus) / "manifest.json");
      for (const auto& [id, _] : manifest.entries)
        images[id] = load_image_record(manifest, id).pixels;
      hash = [&images](const std::string& id) {
        auto it = images.find(id);
        return it == images.end() ? fnv1a64(id) : pixel_hash(it->second);
      };
    }

    auto result = run_filter_pipeline(
        sessions, lexicon, catalog ? &*catalog : nullptr,
        keywords ? &*keywords : nullptr, hash);
    save_sessions(f_out, result.kept);
    if (!f_queue.empty()) save_review_queue(f_queue, result.evidence);
    std::cout << "kept " << result.kept.size() << " / " << sessions.size()
              << " sessions (duplicates " << result.count(Verdict::duplicate)
              << ", circles " << result.count(Verdict::circle)
              << ", conflicts " << result.count(Verdict::conflict)
              << ", flagged " << result.count(Verdict::inconsistency_flag)
              << ")\n";
  });

  // ---- stats ----
  auto* stats = app.add_subcommand("stats", "dataset statistics table");
  std::string s_sessions;
  bool s_json = false;
  stats->add_option("--sessions", s_sessions, "sessions jsonl")
      ->required()
      ->check(CLI::ExistingFile);
  stats->add_flag("--json", s_json, "emit JSON instead of a table");
  stats->callback([&]() {
    SessionValidation lax;
    lax.structural_only = true;
    auto sessions = load_sessions(s_sessions, lax);
    auto st = dataset_stats(sessions);
    if (s_json)
      std::cout << st.to_json().dump(1) << "\n";
    else
      std::cout << st.render_table();
  });

  // ---- train ----
  auto* train = app.add_subcommand("train", "train one scoring module");
  std::string t_module, t_corpus, t_sessions, t_run;
  int t_epochs = -1, t_batch = -1;
  double t_lr = -1, t_margin = -1;
  std::int64_t t_seed = -1;
  train->add_option("--module", t_module, "composite|comparative|attribute")
      ->required();
  train->add_option("--corpus", t_corpus, "corpus directory")->required();
  train->add_option("--sessions", t_sessions, "sessions jsonl")
      ->required()
      ->check(CLI::ExistingFile);
  train->add_option("--run-dir", t_run, "run directory")->required();
  train->add_option("--epochs", t_epochs, "override config epochs");
  train->add_option("--lr", t_lr, "override learning rate");
  train->add_option("--margin", t_margin, "override margin");
  train->add_option("--batch", t_batch, "override batch size");
  train->add_option("--seed", t_seed, "override training seed");
  train->callback([&]() {
    Config config = common.load();
    if (t_epochs > 0) config.training.epochs = t_epochs;
    if (t_lr > 0) config.training.lr = t_lr;
    if (t_margin > 0) config.training.margin = t_margin;
    if (t_batch > 0) config.training.batch_size = t_batch;
    if (t_seed >= 0) config.training.seed = static_cast<std::uint64_t>(t_seed);
    config.training.threads = config.threads;

    Dataset data = load_dataset(t_corpus, t_sessions, config.d_t,
                                config.spell_lexicon);
    auto split = split_sessions(data.sessions.size(), config.train_frac,
                                config.val_frac, config.test_frac, config.seed);
    auto module = config.make_module(t_module);
    auto outcome = train_module(*module, data, split, config.training,
                                config.module_config_hash(t_module),
                                config.image.input_size);

    fs::create_directories(fs::path(t_run) / "checkpoints");
    fs::create_directories(fs::path(t_run) / "scores");
    outcome.checkpoint.save(checkpoint_base(t_run, t_module));
    for (const auto& m : outcome.best_val_matrices)
      m.save(fs::path(t_run) / "scores" /
             strf(t_module, ".", to_string(m.category), ".val.smx"));
    std::cout << "best epoch " << outcome.best_epoch << " val r@5 "
              << outcome.best_val_r5 << "; checkpoint and score matrices in "
              << t_run << "\n";
  });

  // ---- fuse-weights ----
  auto* fusew = app.add_subcommand(
      "fuse-weights", "search fusion weights on cached validation matrices");
  std::string w_run, w_objective;
  int w_budget = -1;
  std::int64_t w_seed = -1;
  bool w_iterative = false;
  fusew->add_option("--run-dir", w_run, "run directory")->required();
  fusew->add_option("--objective", w_objective, "r@5|r@8|mrr|sum");
  fusew->add_option("--budget", w_budget, "evaluation budget");
  fusew->add_option("--seed", w_seed, "search seed");
  fusew->add_flag("--iterative", w_iterative,
                  "one extra re-fusion round with the fused matrix");
  fusew->callback([&]() {
    Config config = common.load();
    FusionSearchConfig cfg = config.fusion;
    if (!w_objective.empty()) cfg.objective = objective_from_string(w_objective);
    if (w_budget > 0) cfg.budget = w_budget;
    if (w_seed >= 0) cfg.seed = static_cast<std::uint64_t>(w_seed);
    if (w_iterative) cfg.iterative_refusion = true;

    FusionInput in;
    for (Category cat : kCategories) {
      const fs::path dir = fs::path(w_run) / "scores";
      const fs::path p1 = dir / strf("composite.", to_string(cat), ".val.smx");
      if (!fs::exists(p1)) continue;
      in.s1.push_back(ScoreMatrix::load(p1));
      in.s2.push_back(ScoreMatrix::load(
          dir / strf("comparative.", to_string(cat), ".val.smx")));
      in.s3.push_back(ScoreMatrix::load(
          dir / strf("attribute.", to_string(cat), ".val.smx")));
    }
    require(!in.s1.empty(), "no cached score matrices under ", w_run,
            "/scores; run train for all three modules first");
    FusionWeights weights = search_fusion_weights(in, cfg);
    write_text_file(fs::path(w_run) / "fusion.json",
                    fusion_weights_to_json(weights).dump(1) + "\n");
    std::cout << "weights (" << weights.w1 << ", " << weights.w2 << ", "
              << weights.w3 << ") " << weights.objective << " = "
              << weights.objective_value << "\n";
  });

  // ---- build-index ----
  auto* bindex = app.add_subcommand("build-index",
                                    "precompute candidate features");
  std::string i_corpus, i_run;
  bindex->add_option("--corpus", i_corpus, "corpus directory")->required();
  bindex->add_option("--run-dir", i_run, "run directory")->required();
  bindex->callback([&]() {
    Config config = common.load();
    Dataset data = load_dataset(i_corpus, "", config.d_t, config.spell_lexicon);
    auto modules = load_trained_modules(config, i_run);
    auto index = build_candidate_index(data, *modules.composite,
                                       *modules.comparative,
                                       config.image.input_size);
    index.save(fs::path(i_run) / "index.bin");
    std::cout << "indexed " << index.entries.size() << " candidates\n";
  });

  // ---- evaluate ----
  auto* evaluate = app.add_subcommand("evaluate", "metrics on a session split");
  std::string e_corpus, e_sessions, e_run, e_split = "val", e_out, e_md;
  evaluate->add_option("--corpus", e_corpus, "corpus directory")->required();
  evaluate->add_option("--sessions", e_sessions, "sessions jsonl")
      ->required()
      ->check(CLI::ExistingFile);
  evaluate->add_option("--run-dir", e_run, "run directory")->required();
  evaluate->add_option("--split", e_split, "train|val|test");
  evaluate->add_option("--out", e_out, "write the JSON report here");
  evaluate->add_option("--md", e_md, "write the rendered table here");
  evaluate->callback([&]() {
    Config config = common.load();
    Dataset data = load_dataset(e_corpus, e_sessions, config.d_t,
                                config.spell_lexicon);
    auto modules = load_trained_modules(config, e_run);
    FusionWeights weights;
    const fs::path wpath = fs::path(e_run) / "fusion.json";
    if (fs::exists(wpath)) {
      std::ifstream in(wpath);
      json j;
      in >> j;
      weights = fusion_weights_from_json(j);
    } else {
      std::cerr << "no fusion.json in " << e_run
                << ", using equal weights (1,1,1)\n";
    }
    auto indices = pick_split(config, data.sessions.size(), e_split);
    std::optional<CandidateIndex> index;
    if (fs::exists(fs::path(e_run) / "index.bin"))
      index = CandidateIndex::load(fs::path(e_run) / "index.bin");
    auto artifacts = evaluate_split(
        data, indices, *modules.composite, *modules.comparative,
        *modules.attribute, weights, config.image.input_size, config.threads,
        index ? &*index : nullptr);
    const std::string table = artifacts.report.render_table();
    std::cout << table;
    if (!e_out.empty())
      write_text_file(e_out, artifacts.report.to_json().dump(1) + "\n");
    if (!e_md.empty()) write_text_file(e_md, table);
  });

  // ---- retrieve ----
  auto* retrieve = app.add_subcommand("retrieve",
                                      "rank candidates for a session prefix");
  std::string r_corpus, r_run, r_session, r_out;
  int r_k = 5;
  retrieve->add_option("--corpus", r_corpus, "corpus directory")->required();
  retrieve->add_option("--run-dir", r_run, "run directory")->required();
  retrieve->add_option("--session", r_session,
                       "JSON file holding one session (target optional)")
      ->required()
      ->check(CLI::ExistingFile);
  retrieve->add_option("--k", r_k, "results to return");
  retrieve->add_option("--out", r_out,
                       "report file (.html renders images, else text)");
  retrieve->callback([&]() {
    Config config = common.load();
    Dataset data = load_dataset(r_corpus, "", config.d_t, config.spell_lexicon);
    auto modules = load_trained_modules(config, r_run);
    auto index = CandidateIndex::load(fs::path(r_run) / "index.bin");
    FusionWeights weights;
    {
      const fs::path wpath = fs::path(r_run) / "fusion.json";
      if (fs::exists(wpath)) {
        std::ifstream in(wpath);
        json j;
        in >> j;
        weights = fusion_weights_from_json(j);
      }
    }
    Session query;
    {
      std::ifstream in(r_session);
      require(in.good(), "cannot open session file: ", r_session);
      json j;
      in >> j;
      if (!j.contains("target_image_id")) j["target_image_id"] = "";
      if (!j.contains("session_id")) j["session_id"] = "query";
      query = session_from_json(j);
    }
    auto result = retrieve_topk(data, query, r_k, index, *modules.composite,
                                *modules.comparative, *modules.attribute,
                                weights, config.image.input_size);
    const std::string text = render_retrieval_text(result, data);
    std::cout << text;
    if (!r_out.empty()) {
      if (fs::path(r_out).extension() == ".html")
        write_text_file(r_out, render_retrieval_html(result, data));
      else
        write_text_file(r_out, text);
    }
  });

  try {
    CLI11_PARSE(app, argc, argv);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
