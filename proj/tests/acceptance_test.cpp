// SPDX-License-Identifier: Apache-2.0
//
// Acceptance suite: runs every release criterion end to end and prints
// one pass/fail line per criterion. Exit code is the failure count.
#include <chrono>
#include <cstdio>
#include <iostream>
#include <set>

#include "mfir/config.hpp"
#include "mfir/data.hpp"
#include "mfir/derivation.hpp"
#include "mfir/evaluate.hpp"
#include "mfir/synth.hpp"
#include "mfir/training.hpp"
#include "testutil.hpp"

using namespace mfir;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int g_failures = 0;

void report(int id, const std::string& name, const Outcome& o) {
  std::printf("[%s] %2d %s%s%s\n", o.pass ? "PASS" : "FAIL", id, name.c_str(),
              o.detail.empty() ? "" : " - ", o.detail.c_str());
  std::fflush(stdout);
  if (!o.pass) ++g_failures;
}

template <typename Fn>
void criterion(int id, const std::string& name, Fn&& fn) {
  Outcome o;
  try {
    o = fn();
  } catch (const std::exception& e) {
    o.pass = false;
    o.detail = strf("exception: ", e.what());
  }
  report(id, name, o);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

// --------------------------------------------------------------------------
// independent oracles (kept local to the acceptance suite)

int sort_rank_oracle(const ScoreMatrix& m, int session) {
  std::vector<std::pair<double, std::string>> order;
  for (int j = 0; j < static_cast<int>(m.candidate_ids.size()); ++j)
    order.push_back({m.scores(session, j), m.candidate_ids[j]});
  std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  for (int r = 0; r < static_cast<int>(order.size()); ++r)
    if (order[r].second == m.target_ids[session]) return r + 1;
  return -1;
}

std::vector<std::vector<int>> path_oracle(const std::vector<Triplet>& ts,
                                          int min_images, int max_images) {
  std::vector<std::vector<int>> found;
  const int n = static_cast<int>(ts.size());
  std::function<void(std::vector<int>&)> go = [&](std::vector<int>& path) {
    const int images = static_cast<int>(path.size()) + 1;
    if (!path.empty() && images >= min_images && images <= max_images)
      found.push_back(path);
    if (!path.empty() && images >= max_images) return;
    for (int i = 0; i < n; ++i) {
      if (std::find(path.begin(), path.end(), i) != path.end()) continue;
      if (!path.empty()) {
        const Triplet& prev = ts[path.back()];
        if (ts[i].ref != prev.target || ts[i].category != prev.category)
          continue;
        std::set<std::string> imgs;
        imgs.insert(ts[path.front()].ref);
        for (int idx : path) imgs.insert(ts[idx].target);
        if (imgs.count(ts[i].target)) continue;
      } else if (ts[i].ref == ts[i].target) {
        continue;
      }
      path.push_back(i);
      go(path);
      path.pop_back();
    }
  };
  std::vector<int> path;
  go(path);
  std::sort(found.begin(), found.end());
  found.erase(std::unique(found.begin(), found.end()), found.end());
  return found;
}

ScoreMatrix random_score_matrix(Rng& rng, int sessions, int cands,
                                bool ties) {
  ScoreMatrix m;
  m.module_id = "test";
  for (int i = 0; i < sessions; ++i) m.session_ids.push_back(strf("s", i));
  for (int j = 0; j < cands; ++j) m.candidate_ids.push_back(strf("c", j));
  for (int i = 0; i < sessions; ++i)
    m.target_ids.push_back(strf("c", rng.below(cands)));
  m.scores.resize(sessions, cands);
  for (int i = 0; i < sessions; ++i)
    for (int j = 0; j < cands; ++j) {
      double v = rng.uniform(-1, 1);
      if (ties) v = std::round(v * 4) / 4.0;
      m.scores(i, j) = v;
    }
  return m;
}

// --------------------------------------------------------------------------
// criterion 9 state shared with 10/11

struct DeskRun {
  testutil::TempDir dir{"acceptance"};
  Dataset data;
  SplitIndices split;
  Config config;
  std::unique_ptr<CompositeScorer> composite;
  std::unique_ptr<ComparativeScorer> comparative;
  std::unique_ptr<AttributeScorer> attribute;
  TrainOutcome composite_out, comparative_out, attribute_out;
  FusionWeights weights;
  EvaluationArtifacts artifacts;
  double single_r5[3] = {0, 0, 0};
  double fused_r5 = 0;
  double runtime_sec = 0;
  long derived_sessions = 0;
  bool ready = false;
};

DeskRun g_desk;

Config desk_config() {
  Config c;
  c.d_t = 24;
  c.d_p = 32;
  c.image.arch = "tiny";
  c.image.input_size = 64;
  c.text.blocks = 3;
  c.training.batch_size = 12;
  c.training.margin = 0.2;
  c.training.seed = 7;
  c.training.threads = 2;
  c.training.augment.max_rotation_deg = 10.0;
  c.training.augment.max_translate_frac = 0.05;
  c.training.augment.scale_lo = 0.95;
  c.training.augment.scale_hi = 1.05;
  c.seed = 7;
  c.threads = 2;
  c.fusion.budget = 200;
  c.fusion.seed = 7;
  return c;
}

Outcome run_desk_experiment() {
  const auto t0 = std::chrono::steady_clock::now();
  DeskRun& d = g_desk;
  d.config = desk_config();

  SynthParams params;
  params.n_images = 200;
  params.seed = 7;
  params.embedding_dim = d.config.d_t;
  auto corpus = generate_corpus(params);
  write_corpus(d.dir.path(), corpus);

  auto sessions = chain_triplets(corpus.triplets, 3, 5);
  auto filtered = run_filter_pipeline(sessions, default_antonym_lexicon(),
                                      &corpus.catalog);
  d.derived_sessions = static_cast<long>(filtered.kept.size());
  if (d.derived_sessions < 300)
    return {false, strf("only ", d.derived_sessions, " sessions derived")};
  save_sessions(d.dir.file("sessions.jsonl"), filtered.kept);

  d.data = load_dataset(d.dir.path(), d.dir.file("sessions.jsonl"),
                        d.config.d_t);
  d.split = split_sessions(d.data.sessions.size(), 0.7, 0.3, 0.0, 7);

  d.composite = std::make_unique<CompositeScorer>(d.config.composite_config(),
                                                  Rng(7 ^ fnv1a64("composite")));
  d.comparative = std::make_unique<ComparativeScorer>(
      d.config.comparative_config(), Rng(7 ^ fnv1a64("comparative")));
  d.attribute = std::make_unique<AttributeScorer>(d.config.attribute_config(),
                                                  Rng(7 ^ fnv1a64("attribute")));

  // per-module schedules; every run stays within the 20-epoch cap
  TrainConfig tc = d.config.training;
  tc.epochs = 12;
  tc.lr = 1e-3;
  d.composite_out = train_module(*d.composite, d.data, d.split, tc,
                                 d.config.module_config_hash("composite"), 64);
  d.comparative_out =
      train_module(*d.comparative, d.data, d.split, tc,
                   d.config.module_config_hash("comparative"), 64);
  tc.epochs = 12;
  tc.lr = 3e-3;
  d.attribute_out = train_module(*d.attribute, d.data, d.split, tc,
                                 d.config.module_config_hash("attribute"), 64);

  FusionInput in;
  in.s1 = d.composite_out.best_val_matrices;
  in.s2 = d.comparative_out.best_val_matrices;
  in.s3 = d.attribute_out.best_val_matrices;
  FusionSearchConfig fcfg = d.config.fusion;
  d.weights = search_fusion_weights(in, fcfg);

  d.artifacts = evaluate_split(d.data, d.split.val, *d.composite,
                               *d.comparative, *d.attribute, d.weights, 64,
                               d.config.threads);
  d.fused_r5 = d.artifacts.report.overall.r5;
  const std::vector<std::vector<ScoreMatrix>*> singles = {
      &d.artifacts.s1, &d.artifacts.s2, &d.artifacts.s3};
  for (int k = 0; k < 3; ++k)
    d.single_r5[k] =
        objective_of_ranks(pooled_target_ranks(*singles[k]), Objective::r5);

  d.runtime_sec = seconds_since(t0);
  d.ready = true;

  long pool_min = 1 << 30, pool_max = 0;
  for (Category cat : kCategories) {
    const long n =
        static_cast<long>(d.data.manifest.ids_of_category(cat).size());
    pool_min = std::min(pool_min, n);
    pool_max = std::max(pool_max, n);
  }

  std::string detail = strf(
      std::fixed, std::setprecision(3), "sessions=", d.derived_sessions,
      " pools=", pool_min, "-", pool_max, " fused R@5=", d.fused_r5,
      " singles=(", d.single_r5[0], ", ", d.single_r5[1], ", ", d.single_r5[2],
      ") runtime=", std::setprecision(0), d.runtime_sec, "s");
  const bool strong = d.fused_r5 >= 0.42;
  bool no_harm = true;
  for (double s : d.single_r5) no_harm = no_harm && d.fused_r5 >= s - 0.02;
  const bool in_time = d.runtime_sec <= 20 * 60;
  if (!strong) detail += " [fused R@5 below 0.42]";
  if (!no_harm) detail += " [fusion harms a single module]";
  if (!in_time) detail += " [over the 20 minute budget]";
  return {strong && no_harm && in_time, detail};
}

}  // namespace

int main() {
  std::printf("acceptance suite\n");

  criterion(1, "metric oracle equivalence", []() -> Outcome {
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(101);
    for (int trial = 0; trial < 50; ++trial) {
      ScoreMatrix m = random_score_matrix(rng, 20, 20, trial % 2 == 0);
      auto ranks = target_ranks(m);
      double r5 = 0, r8 = 0, rr = 0;
      for (int i = 0; i < 20; ++i) {
        const int oracle = sort_rank_oracle(m, i);
        if (ranks[i] != oracle)
          return {false, strf("rank mismatch at trial ", trial)};
        r5 += oracle <= 5;
        r8 += oracle <= 8;
        rr += 1.0 / oracle;
      }
      if (recall_at_k(m, 5).value != r5 / 20 ||
          recall_at_k(m, 8).value != r8 / 20 || mrr(m) != rr / 20)
        return {false, strf("metric mismatch at trial ", trial)};
    }
    const double secs = seconds_since(t0);
    return {secs < 5.0, strf("50 matrices in ", std::fixed,
                             std::setprecision(2), secs, "s")};
  });

  criterion(2, "chaining oracle equivalence", []() -> Outcome {
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(202);
    for (int trial = 0; trial < 100; ++trial) {
      const int n_imgs = 4 + static_cast<int>(rng.below(7));
      const int n_trip = 1 + static_cast<int>(rng.below(30));
      std::vector<Triplet> ts;
      for (int i = 0; i < n_trip; ++i) {
        std::string a = strf("i", rng.below(n_imgs));
        std::string b = strf("i", rng.below(n_imgs));
        if (a == b) continue;
        ts.push_back({a, strf("f", i), b, Category::dress});
      }
      auto sessions = chain_triplets(ts, 3, 5);
      auto oracle = path_oracle(ts, 3, 5);
      if (sessions.size() != oracle.size())
        return {false, strf("count mismatch at trial ", trial, ": ",
                            sessions.size(), " vs ", oracle.size())};
      for (std::size_t k = 0; k < oracle.size(); ++k) {
        const auto& path = oracle[k];
        const Session& s = sessions[k];
        if (s.turns.size() != path.size())
          return {false, strf("length mismatch at trial ", trial)};
        for (std::size_t j = 0; j < path.size(); ++j)
          if (s.turns[j].image_id != ts[path[j]].ref ||
              s.turns[j].feedback != ts[path[j]].feedback)
            return {false, strf("content mismatch at trial ", trial)};
        if (s.target_image_id != ts[path.back()].target)
          return {false, strf("target mismatch at trial ", trial)};
      }
    }
    const double secs = seconds_since(t0);
    return {secs < 30.0, strf("100 graphs in ", std::fixed,
                              std::setprecision(2), secs, "s")};
  });

  criterion(3, "filter exactness on planted violations", []() -> Outcome {
    SynthParams params;
    params.n_images = 90;
    params.seed = 33;
    auto corpus = generate_corpus(params);
    auto chained = chain_triplets(corpus.triplets, 3, 5);
    auto clean =
        run_filter_pipeline(chained, default_antonym_lexicon()).kept;
    if (clean.size() < 40)
      return {false, strf("base corpus too small: ", clean.size())};

    // plant 5 duplicates, 5 circles, 5 conflicts on top of clean sessions
    std::vector<Session> pool = clean;
    std::set<std::string> planted;
    for (int k = 0; k < 5; ++k) {
      Session dup = clean[k];
      dup.session_id = strf("planted-dup-", k);
      dup.turns[1].image_id = dup.turns[0].image_id;
      planted.insert(dup.session_id);
      pool.push_back(dup);

      Session circle = clean[k + 5];
      circle.session_id = strf("planted-circle-", k);
      circle.target_image_id = circle.turns[0].image_id;
      planted.insert(circle.session_id);
      pool.push_back(circle);

      Session conflict = clean[k + 10];
      conflict.session_id = strf("planted-conflict-", k);
      conflict.turns[0].feedback = "wants long sleeves please";
      conflict.turns.back().feedback = "actually make it sleeveless";
      planted.insert(conflict.session_id);
      pool.push_back(conflict);
    }

    auto result = run_filter_pipeline(pool, default_antonym_lexicon());
    std::set<std::string> removed;
    for (const auto& s : result.removed) removed.insert(s.session_id);
    if (removed != planted) {
      std::string extra, missing;
      for (const auto& id : removed)
        if (!planted.count(id)) extra += " " + id;
      for (const auto& id : planted)
        if (!removed.count(id)) missing += " " + id;
      return {false, strf("removed set != planted set; extra:[", extra,
                          "] missing:[", missing, "]")};
    }
    return {true, strf("exactly 15 of ", pool.size(), " sessions removed")};
  });

  criterion(4, "attention stochasticity", []() -> Outcome {
    AttributeConfig cfg;
    cfg.d_t = 6;
    cfg.d_b = 4;
    AttributeScorer mod(cfg, Rng(404));
    Rng rng(405);
    for (int trial = 0; trial < 1000; ++trial) {
      nn::Tape t(false);
      const int n = 1 + static_cast<int>(rng.below(4));
      std::vector<nn::Var> turns;
      for (int i = 0; i < n; ++i) {
        nn::Mat v(6, 1);
        for (int r = 0; r < 6; ++r) v(r, 0) = 3 * rng.normal();
        turns.push_back(t.constant(v));
      }
      auto h = mod.encode_history(t, turns);
      nn::Mat a(6, 1);
      for (int r = 0; r < 6; ++r) a(r, 0) = 3 * rng.normal();
      auto [state, alpha] = mod.candidate_to_feedback(t, h, t.constant(a));
      if (alpha.val().minCoeff() < 0.0 ||
          std::abs(alpha.val().sum() - 1.0) > 1e-6)
        return {false, strf("alpha violates stochasticity at trial ", trial)};

      std::vector<nn::Var> attrs, sims;
      for (int m = 0; m < 5; ++m) {
        nn::Mat av(6, 1);
        for (int r = 0; r < 6; ++r) av(r, 0) = 3 * rng.normal();
        attrs.push_back(t.constant(av));
        sims.push_back(
            t.constant(nn::Mat::Constant(1, 1, rng.uniform(-1, 1))));
      }
      auto [s3, beta] = mod.feedback_to_candidate(t, h.pooled, attrs, sims);
      if (beta.val().minCoeff() < 0.0 ||
          std::abs(beta.val().sum() - 1.0) > 1e-6)
        return {false, strf("beta violates stochasticity at trial ", trial)};
    }
    return {true, "1000 random inputs per stage"};
  });

  criterion(5, "gradient checks vs central differences", []() -> Outcome {
    std::vector<std::pair<std::string, double>> worst;

    {  // encode_text
      nn::ParamStore params;
      TextEncoderConfig cfg;
      cfg.dim = 6;
      cfg.blocks = 2;
      Rng rng(501);
      TextEncoder enc(params, cfg, "txt", rng);
      nn::Parameter& input = params.add("input", 3, 6);
      for (Eigen::Index i = 0; i < input.value.size(); ++i)
        input.value.data()[i] = rng.normal();
      worst.emplace_back("encode_text",
                         testutil::gradient_check(params, [&](nn::Tape& t) {
                           nn::Var p = enc.encode(t, t.leaf(input)).pooled;
                           return nn::mean_all(nn::mul(p, p));
                         }));
    }
    auto not_img = [](const std::string& n) { return n.rfind("img.", 0) != 0; };
    {  // compose
      CompositeConfig cfg;
      cfg.d_p = 6;
      cfg.d_t = 4;
      cfg.image.arch = "tiny";
      cfg.image.input_size = 16;
      cfg.text.blocks = 1;
      CompositeScorer mod(cfg, Rng(502));
      nn::ParamStore& params = mod.params();
      Rng rng(503);
      nn::Parameter& xp = params.add("in.xp", 6, 1);
      nn::Parameter& xt = params.add("in.xt", 4, 1);
      for (auto* p : {&xp, &xt})
        for (Eigen::Index i = 0; i < p->value.size(); ++i)
          p->value.data()[i] = rng.normal();
      worst.emplace_back(
          "compose", testutil::gradient_check(
                         params,
                         [&](nn::Tape& t) {
                           nn::Var c = mod.compose(t, t.leaf(xp), t.leaf(xt));
                           return nn::mean_all(nn::mul(c, c));
                         },
                         1e-5, not_img));
      // aggregate_turns on the same module
      nn::Parameter& c1 = params.add("in.c1", 6, 1);
      nn::Parameter& c2 = params.add("in.c2", 6, 1);
      for (auto* p : {&c1, &c2})
        for (Eigen::Index i = 0; i < p->value.size(); ++i)
          p->value.data()[i] = rng.normal();
      worst.emplace_back(
          "aggregate_turns",
          testutil::gradient_check(
              params,
              [&](nn::Tape& t) {
                nn::Var out =
                    mod.aggregate_turns(t, {t.leaf(c1), t.leaf(c2)});
                return nn::mean_all(nn::mul(out, out));
              },
              1e-5, not_img));
    }
    {  // differential_rep -> score_comparative
      ComparativeConfig cfg;
      cfg.d_p = 6;
      cfg.d_t = 4;
      cfg.image.arch = "tiny";
      cfg.image.input_size = 16;
      cfg.text.blocks = 1;
      ComparativeScorer mod(cfg, Rng(504));
      nn::ParamStore& params = mod.params();
      Rng rng(505);
      std::vector<nn::Parameter*> ins;
      for (const char* name : {"in.r1", "in.r2", "in.cand"})
        ins.push_back(&params.add(name, 6, 1));
      for (const char* name : {"in.t1", "in.t2"})
        ins.push_back(&params.add(name, 4, 1));
      for (auto* p : ins)
        for (Eigen::Index i = 0; i < p->value.size(); ++i)
          p->value.data()[i] = rng.normal();
      worst.emplace_back(
          "comparative_chain",
          testutil::gradient_check(
              params,
              [&](nn::Tape& t) {
                return mod.score_session(
                    t, {t.leaf(*ins[0]), t.leaf(*ins[1])},
                    {t.leaf(*ins[3]), t.leaf(*ins[4])}, t.leaf(*ins[2]));
              },
              1e-5, not_img));
    }
    {  // full attribute stack
      AttributeConfig cfg;
      cfg.d_t = 3;
      cfg.d_b = 2;
      AttributeScorer mod(cfg, Rng(506));
      nn::ParamStore& params = mod.params();
      Rng rng(507);
      nn::Parameter& t1 = params.add("in.t1", 3, 1);
      nn::Parameter& t2 = params.add("in.t2", 3, 1);
      std::vector<nn::Parameter*> attrs;
      for (int m = 0; m < 5; ++m) attrs.push_back(&params.add(strf("in.a", m), 3, 1));
      for (auto* p : {&t1, &t2})
        for (Eigen::Index i = 0; i < p->value.size(); ++i)
          p->value.data()[i] = rng.normal();
      for (auto* p : attrs)
        for (Eigen::Index i = 0; i < p->value.size(); ++i)
          p->value.data()[i] = rng.normal();
      worst.emplace_back(
          "attribute_stack",
          testutil::gradient_check(params, [&](nn::Tape& t) {
            auto h = mod.encode_history(t, {t.leaf(t1), t.leaf(t2)});
            std::vector<nn::Var> avars;
            for (auto* a : attrs) avars.push_back(t.leaf(*a));
            return mod.score_session(t, h, avars);
          }));
    }

    std::string detail;
    bool ok = true;
    for (const auto& [name, err] : worst) {
      detail += strf(name, "=", std::scientific, std::setprecision(1), err, " ");
      ok = ok && err <= 1e-4;
    }
    return {ok, detail};
  });

  criterion(6, "shared-weight cancellation", []() -> Outcome {
    ComparativeConfig cfg;
    cfg.d_p = 8;
    cfg.d_t = 5;
    cfg.image.arch = "tiny";
    cfg.image.input_size = 16;
    cfg.text.blocks = 1;
    ComparativeScorer mod(cfg, Rng(606));
    Rng rng(607);
    double worst = 0;
    for (int trial = 0; trial < 100; ++trial) {
      nn::Tape t(false);
      nn::Mat x(8, 1);
      for (int r = 0; r < 8; ++r) x(r, 0) = 5 * rng.normal();
      nn::Var v = t.constant(x);
      worst = std::max(
          worst, mod.differential_rep(t, v, v).x_diff.val().cwiseAbs().maxCoeff());
    }
    return {worst <= 1e-9, strf("max |x_diff| = ", std::scientific,
                                std::setprecision(2), worst)};
  });

  criterion(7, "batch-hard mining oracle and loss boundaries", []() -> Outcome {
    if (triplet_loss(0.9, 0.1, 0.2) != 0.0) return {false, "margin satisfied"};
    if (std::abs(triplet_loss(0.1, 0.3, 0.2) - 0.4) > 1e-15)
      return {false, "hinge arithmetic"};
    if (triplet_loss(0.5, 0.3, 0.2) != 0.0) return {false, "boundary case"};

    Rng rng(707);
    for (int trial = 0; trial < 200; ++trial) {
      const int B = 2 + static_cast<int>(rng.below(7));
      Eigen::MatrixXd scores(B, B);
      for (int i = 0; i < B; ++i)
        for (int j = 0; j < B; ++j) scores(i, j) = rng.uniform(-1, 1);
      std::vector<std::string> targets;
      for (int j = 0; j < B; ++j)
        targets.push_back(strf("t", rng.below(std::max(2, B - 1))));
      auto mined = batch_hard_mine(scores, targets);
      std::size_t at = 0;
      for (int i = 0; i < B; ++i) {
        double best = -1e300;
        bool found = false;
        for (int j = 0; j < B; ++j) {
          if (j == i || targets[j] == targets[i]) continue;
          found = true;
          best = std::max(best, scores(i, j));
        }
        if (!found) continue;
        if (at >= mined.pairs.size() || mined.pairs[at].first != i)
          return {false, strf("anchor bookkeeping at trial ", trial)};
        if (scores(i, mined.pairs[at].second) != best)
          return {false, strf("negative not hardest at trial ", trial)};
        ++at;
      }
      if (at != mined.pairs.size())
        return {false, strf("pair count at trial ", trial)};
    }
    return {true, "200 random batches, B <= 8"};
  });

  criterion(8, "fusion weight search vs grid oracle", []() -> Outcome {
    Rng rng(808);
    FusionInput in;
    {
      ScoreMatrix s1 = random_score_matrix(rng, 20, 20, false);
      for (int i = 0; i < 20; ++i) {
        for (int j = 0; j < 20; ++j) s1.scores(i, j) = rng.uniform(0, 0.2);
        for (int j = 0; j < 20; ++j)
          if (s1.candidate_ids[j] == s1.target_ids[i]) s1.scores(i, j) = 0.9;
      }
      ScoreMatrix s2 = s1, s3 = s1;
      for (int i = 0; i < 20; ++i)
        for (int j = 0; j < 20; ++j) {
          s2.scores(i, j) = rng.uniform(-1, 1);
          s3.scores(i, j) = rng.uniform(-1, 1);
        }
      in.s1 = {s1};
      in.s2 = {s2};
      in.s3 = {s3};
    }
    double oracle = -1;
    for (int a = 0; a <= 20; ++a)
      for (int b = 0; b <= 20; ++b)
        for (int c = 0; c <= 20; ++c) {
          if (a == 0 && b == 0 && c == 0) continue;
          oracle = std::max(
              oracle, evaluate_weights(in, {a / 20.0, b / 20.0, c / 20.0},
                                       Objective::r5));
        }
    FusionSearchConfig cfg;
    cfg.budget = 200;
    cfg.seed = 11;
    FusionWeights w1 = search_fusion_weights(in, cfg);
    FusionWeights w2 = search_fusion_weights(in, cfg);
    const bool reaches = w1.objective_value >= 0.99 * oracle;
    const bool deterministic = w1.w1 == w2.w1 && w1.w2 == w2.w2 &&
                               w1.w3 == w2.w3 &&
                               w1.objective_value == w2.objective_value;
    return {reaches && deterministic,
            strf("search=", w1.objective_value, " oracle=", oracle,
                 deterministic ? "" : " [nondeterministic]")};
  });

  criterion(9, "end-to-end desk-scale retrieval", run_desk_experiment);

  criterion(10, "ranking invariances", []() -> Outcome {
    Rng rng(1010);
    // R@5 <= R@8 on random and on the desk matrices
    for (int trial = 0; trial < 50; ++trial) {
      ScoreMatrix m = random_score_matrix(rng, 12, 15, trial % 2 == 0);
      if (recall_at_k(m, 5).value > recall_at_k(m, 8).value)
        return {false, "monotonicity on random matrices"};
    }
    if (g_desk.ready) {
      for (const auto* set :
           {&g_desk.artifacts.s1, &g_desk.artifacts.s2, &g_desk.artifacts.s3,
            &g_desk.artifacts.fused})
        for (const auto& m : *set)
          if (recall_at_k(m, 5).value > recall_at_k(m, 8).value)
            return {false, "monotonicity on desk matrices"};
    }

    // positive scaling of the fusion weights leaves the report unchanged
    if (!g_desk.ready) return {false, "desk experiment unavailable"};
    FusionWeights scaled = g_desk.weights;
    scaled.w1 *= 3.7;
    scaled.w2 *= 3.7;
    scaled.w3 *= 3.7;
    auto again = evaluate_split(g_desk.data, g_desk.split.val,
                                *g_desk.composite, *g_desk.comparative,
                                *g_desk.attribute, scaled, 64, 2);
    if (again.report.to_json().dump() != g_desk.artifacts.report.to_json().dump())
      return {false, "report changed under weight scaling"};

    // permuting candidate insertion order leaves the metrics unchanged
    for (const auto& m : g_desk.artifacts.fused) {
      ScoreMatrix p = m;
      std::vector<int> perm(m.candidate_ids.size());
      for (std::size_t j = 0; j < perm.size(); ++j) perm[j] = static_cast<int>(j);
      rng.shuffle(perm);
      for (std::size_t j = 0; j < perm.size(); ++j) {
        p.candidate_ids[j] = m.candidate_ids[perm[j]];
        p.scores.col(static_cast<Eigen::Index>(j)) =
            m.scores.col(perm[j]);
      }
      if (target_ranks(p) != target_ranks(m) ||
          recall_at_k(p, 5).value != recall_at_k(m, 5).value ||
          mrr(p) != mrr(m))
        return {false, "metrics changed under candidate permutation"};
    }
    return {true, "monotone in k; scale- and permutation-invariant"};
  });

  criterion(11, "persistence roundtrips", []() -> Outcome {
    if (!g_desk.ready) return {false, "desk experiment unavailable"};
    DeskRun& d = g_desk;
    const auto base = d.dir.file("ck");

    // checkpoint roundtrip: fresh modules reproduce the validation scores
    d.composite_out.checkpoint.save(strf(base.string(), "-composite"));
    d.comparative_out.checkpoint.save(strf(base.string(), "-comparative"));
    d.attribute_out.checkpoint.save(strf(base.string(), "-attribute"));

    CompositeScorer composite2(d.config.composite_config(), Rng(999));
    ComparativeScorer comparative2(d.config.comparative_config(), Rng(998));
    AttributeScorer attribute2(d.config.attribute_config(), Rng(997));
    apply_checkpoint(composite2,
                     ModelCheckpoint::load(strf(base.string(), "-composite")),
                     d.config.module_config_hash("composite"));
    apply_checkpoint(comparative2,
                     ModelCheckpoint::load(strf(base.string(), "-comparative")),
                     d.config.module_config_hash("comparative"));
    apply_checkpoint(attribute2,
                     ModelCheckpoint::load(strf(base.string(), "-attribute")),
                     d.config.module_config_hash("attribute"));

    auto redo = evaluate_split(d.data, d.split.val, composite2, comparative2,
                               attribute2, d.weights, 64, 2);
    double worst = 0;
    for (std::size_t c = 0; c < redo.fused.size(); ++c)
      worst = std::max(worst, (redo.fused[c].scores -
                               d.artifacts.fused[c].scores)
                                  .cwiseAbs()
                                  .maxCoeff());
    if (worst > 1e-7)
      return {false, strf("checkpoint roundtrip diff ", worst)};

    // index roundtrip reproduces the same matrices
    auto index = build_candidate_index(d.data, composite2, comparative2, 64);
    index.save(d.dir.file("index.bin"));
    auto index2 = CandidateIndex::load(d.dir.file("index.bin"));
    auto redo_idx =
        evaluate_split(d.data, d.split.val, composite2, comparative2,
                       attribute2, d.weights, 64, 2, &index2);
    for (std::size_t c = 0; c < redo_idx.fused.size(); ++c)
      worst = std::max(worst, (redo_idx.fused[c].scores -
                               d.artifacts.fused[c].scores)
                                  .cwiseAbs()
                                  .maxCoeff());
    if (worst > 1e-7) return {false, strf("index roundtrip diff ", worst)};

    // version / config-hash / fingerprint mismatches are rejected
    bool rejected = false;
    try {
      apply_checkpoint(composite2,
                       ModelCheckpoint::load(strf(base.string(), "-composite")),
                       0xdeadbeef);
    } catch (const Error&) {
      rejected = true;
    }
    if (!rejected) return {false, "config-hash mismatch accepted"};

    rejected = false;
    CompositeScorer other(d.config.composite_config(), Rng(31337));
    try {
      verify_index(index2, other, comparative2);
    } catch (const Error&) {
      rejected = true;
    }
    if (!rejected) return {false, "index fingerprint mismatch accepted"};

    return {true, strf("max roundtrip diff ", std::scientific,
                       std::setprecision(1), worst)};
  });

  criterion(12, "stats schema parity", []() -> Outcome {
    if (!g_desk.ready) return {false, "desk experiment unavailable"};
    auto stats = dataset_stats(g_desk.data.sessions);
    json j = stats.to_json();
    // exactly the documented columns
    const std::vector<std::string> cols = {"sessions_3_turn", "sessions_4_turn",
                                           "sessions_5_turn", "total_sessions",
                                           "total_images"};
    for (const char* cat : {"dress", "shirt", "toptee"}) {
      if (!j["per_category"].contains(cat))
        return {false, strf("missing category ", cat)};
      const json& row = j["per_category"][cat];
      if (row.size() != cols.size()) return {false, "unexpected column count"};
      for (const auto& c : cols)
        if (!row.contains(c)) return {false, strf("missing column ", c)};
    }
    if (!j.contains("total") || !j.contains("mean_feedback_words"))
      return {false, "missing totals or mean feedback length"};

    // cross-check against a direct recount
    long total = 0;
    std::map<Category, std::array<long, 3>> by;
    std::set<std::string> images;
    for (const auto& s : g_desk.data.sessions) {
      ++total;
      const int imgs = static_cast<int>(s.turns.size()) + 1;
      if (imgs >= 3 && imgs <= 5) ++by[s.category][imgs - 3];
      for (const auto& t : s.turns) images.insert(t.image_id);
      images.insert(s.target_image_id);
    }
    if (j["total"]["total_sessions"].get<long>() != total)
      return {false, "total sessions recount mismatch"};
    if (j["total"]["total_images"].get<long>() !=
        static_cast<long>(images.size()))
      return {false, "total images recount mismatch"};
    for (Category cat : kCategories)
      for (int k = 0; k < 3; ++k)
        if (j["per_category"][to_string(cat)][cols[k]].get<long>() !=
            by[cat][k])
          return {false, strf("per-category recount mismatch for ",
                              to_string(cat))};
    return {true, strf(total, " sessions cross-checked")};
  });

  std::printf("%d criterion(s) failed\n", g_failures);
  return g_failures;
}
