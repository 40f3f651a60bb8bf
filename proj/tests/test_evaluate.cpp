// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include "mfir/config.hpp"
#include "mfir/evaluate.hpp"
#include "mfir/synth.hpp"
#include "testutil.hpp"

using namespace mfir;

namespace {

// Random-init modules over a tiny synthetic corpus; no training needed
// for the interface-level contracts tested here.
struct Fixture {
  testutil::TempDir dir{"eval"};
  Dataset data;
  SplitIndices split;
  Config config;
  std::unique_ptr<CompositeScorer> composite;
  std::unique_ptr<ComparativeScorer> comparative;
  std::unique_ptr<AttributeScorer> attribute;

  Fixture() {
    SynthParams params;
    params.n_images = 27;
    params.seed = 5;
    params.embedding_dim = 8;
    auto corpus = generate_corpus(params);
    write_corpus(dir.path(), corpus);
    auto sessions = chain_triplets(corpus.triplets, 3, 4);
    auto kept = run_filter_pipeline(sessions, default_antonym_lexicon()).kept;
    save_sessions(dir.file("sessions.jsonl"), kept);
    data = load_dataset(dir.path(), dir.file("sessions.jsonl"), 8);
    split = split_sessions(data.sessions.size(), 0.5, 0.5, 0.0, 3);

    config.d_t = 8;
    config.d_p = 12;
    config.image.arch = "tiny";
    config.image.input_size = 32;
    config.text.blocks = 2;
    composite = std::make_unique<CompositeScorer>(config.composite_config(),
                                                  Rng(1));
    comparative = std::make_unique<ComparativeScorer>(
        config.comparative_config(), Rng(2));
    attribute =
        std::make_unique<AttributeScorer>(config.attribute_config(), Rng(3));
  }
};

ScoreMatrix perfect_matrix(int sessions, int cands) {
  ScoreMatrix m;
  m.module_id = "fused";
  for (int i = 0; i < sessions; ++i) m.session_ids.push_back(strf("s", i));
  for (int j = 0; j < cands; ++j) m.candidate_ids.push_back(strf("c", j));
  m.scores = Eigen::MatrixXd::Zero(sessions, cands);
  for (int i = 0; i < sessions; ++i) {
    const int target = i % cands;
    m.target_ids.push_back(strf("c", target));
    m.scores(i, target) = 1.0;
  }
  return m;
}

}  // namespace

TEST_CASE("perfect scorer reports all metrics at 1.0") {
  ScoreMatrix m = perfect_matrix(12, 9);
  std::map<std::string, int> image_count;
  for (const auto& id : m.session_ids) image_count[id] = 3;
  auto report = build_eval_report({m}, image_count);
  REQUIRE(report.overall.r5 == 1.0);
  REQUIRE(report.overall.r8 == 1.0);
  REQUIRE(report.overall.mrr == 1.0);
  REQUIRE(report.overall.sessions == 12);
}

TEST_CASE("random scorer on a pool of 100 lands near R@5 = 0.05") {
  Rng rng(11);
  const int sessions = 600, cands = 100;
  ScoreMatrix m;
  m.module_id = "random";
  for (int j = 0; j < cands; ++j) m.candidate_ids.push_back(strf("c", j));
  m.scores.resize(sessions, cands);
  for (int i = 0; i < sessions; ++i) {
    m.session_ids.push_back(strf("s", i));
    m.target_ids.push_back(strf("c", rng.below(cands)));
    for (int j = 0; j < cands; ++j) m.scores(i, j) = rng.uniform(-1, 1);
  }
  const double r5 = recall_at_k(m, 5).value;
  // binomial: p=0.05, n=600 -> sigma ~ 0.0089; allow 4 sigma
  REQUIRE(std::abs(r5 - 0.05) < 0.036);
}

TEST_CASE("turn-length breakdown sums to the split total") {
  Fixture f;
  FusionWeights w{1, 1, 1};
  auto artifacts =
      evaluate_split(f.data, f.split.val, *f.composite, *f.comparative,
                     *f.attribute, w, 32, 2);
  long total = 0;
  for (const auto& [n, slice] : artifacts.report.per_turn_length)
    total += slice.sessions;
  REQUIRE(total == artifacts.report.overall.sessions);
  REQUIRE(artifacts.report.overall.sessions ==
          static_cast<long>(f.split.val.size()));

  // JSON schema shape
  json j = artifacts.report.to_json();
  REQUIRE(j.contains("overall"));
  REQUIRE(j["overall"].contains("r5"));
  REQUIRE(j["overall"].contains("r8"));
  REQUIRE(j["overall"].contains("mrr"));
  REQUIRE(j.contains("per_category"));
  REQUIRE(j.contains("per_turn_length"));
  REQUIRE(j.contains("per_session"));
  REQUIRE(j["per_session"].size() ==
          static_cast<std::size_t>(artifacts.report.overall.sessions));
  REQUIRE(j["per_session"][0].contains("session_id"));
  REQUIRE(j["per_session"][0].contains("target_rank"));
}

TEST_CASE("index: rebuild determinism, coverage, fingerprint refusal") {
  Fixture f;
  auto i1 = build_candidate_index(f.data, *f.composite, *f.comparative, 32);
  auto i2 = build_candidate_index(f.data, *f.composite, *f.comparative, 32);
  REQUIRE(i1.entries.size() == f.data.manifest.entries.size());
  for (std::size_t k = 0; k < i1.entries.size(); ++k) {
    REQUIRE(i1.entries[k].id == i2.entries[k].id);
    REQUIRE(i1.entries[k].composite_emb == i2.entries[k].composite_emb);
    REQUIRE(i1.entries[k].comparative_emb == i2.entries[k].comparative_emb);
  }
  for (const auto& [id, _] : f.data.manifest.entries)
    REQUIRE_NOTHROW(i1.get(id));

  // save/load roundtrip preserves the embeddings exactly
  i1.save(f.dir.file("index.bin"));
  auto loaded = CandidateIndex::load(f.dir.file("index.bin"));
  REQUIRE(loaded.entries.size() == i1.entries.size());
  for (std::size_t k = 0; k < i1.entries.size(); ++k)
    REQUIRE(loaded.entries[k].composite_emb == i1.entries[k].composite_emb);

  // different checkpoint -> refusal
  CompositeScorer other(f.config.composite_config(), Rng(99));
  REQUIRE_THROWS_AS(verify_index(loaded, other, *f.comparative), Error);
  REQUIRE_NOTHROW(verify_index(loaded, *f.composite, *f.comparative));
}

TEST_CASE("evaluate with and without the index agree exactly") {
  Fixture f;
  FusionWeights w{0.5, 0.3, 0.9};
  auto index = build_candidate_index(f.data, *f.composite, *f.comparative, 32);
  auto direct = evaluate_split(f.data, f.split.val, *f.composite,
                               *f.comparative, *f.attribute, w, 32, 1);
  auto via_index = evaluate_split(f.data, f.split.val, *f.composite,
                                  *f.comparative, *f.attribute, w, 32, 1,
                                  &index);
  REQUIRE(direct.fused.size() == via_index.fused.size());
  for (std::size_t c = 0; c < direct.fused.size(); ++c)
    REQUIRE(direct.fused[c].scores == via_index.fused[c].scores);
}

TEST_CASE("retrieval: full ranking, argmax first, unknown prefix rejected") {
  Fixture f;
  auto index = build_candidate_index(f.data, *f.composite, *f.comparative, 32);
  FusionWeights w{1, 1, 1};
  const Session& q = f.data.sessions.front();

  auto full = retrieve_topk(f.data, q, 100000, index, *f.composite,
                            *f.comparative, *f.attribute, w, 32);
  const auto pool = index.of_category(q.category);
  REQUIRE(full.items.size() == pool.size());
  for (std::size_t j = 0; j + 1 < full.items.size(); ++j)
    REQUIRE(full.items[j].fused >= full.items[j + 1].fused);

  auto top1 = retrieve_topk(f.data, q, 1, index, *f.composite, *f.comparative,
                            *f.attribute, w, 32);
  REQUIRE(top1.items.size() == 1);
  REQUIRE(top1.items[0].id == full.items[0].id);
  REQUIRE(top1.items[0].fused == full.items[0].fused);

  Session bad = q;
  bad.turns[0].image_id = "no-such-image";
  REQUIRE_THROWS_AS(retrieve_topk(f.data, bad, 5, index, *f.composite,
                                  *f.comparative, *f.attribute, w, 32),
                    Error);

  // report rendering mentions every ranked id
  auto text = render_retrieval_text(full, f.data);
  for (const auto& item : full.items)
    REQUIRE(text.find(item.id) != std::string::npos);
  auto html = render_retrieval_html(top1, f.data);
  REQUIRE(html.find("<html>") != std::string::npos);
  REQUIRE(html.find(top1.items[0].id) != std::string::npos);
}
