// SPDX-License-Identifier: Apache-2.0
//
// Score fusion: entrywise weighted sum of the three module matrices and
// a seeded black-box search for the weights (random sweep plus shrinking
// local refinement, corner-seeded). Rankings are invariant to positive
// rescaling of the weights, so [0,1]^3 is a sufficient search box.
#pragma once

#include <array>
#include <vector>

#include "mfir/core.hpp"
#include "mfir/metrics.hpp"
#include "mfir/rng.hpp"

namespace mfir {

struct FusionWeights {
  double w1 = 1.0, w2 = 1.0, w3 = 1.0;
  std::string objective = "r@5";
  double objective_value = 0.0;

  std::array<double, 3> as_array() const { return {w1, w2, w3}; }
};

enum class Objective { r5, r8, mrr, sum };

inline Objective objective_from_string(const std::string& s) {
  if (s == "r@5") return Objective::r5;
  if (s == "r@8") return Objective::r8;
  if (s == "mrr") return Objective::mrr;
  if (s == "sum") return Objective::sum;
  fail("unknown objective '", s, "' (expected r@5|r@8|mrr|sum)");
}

inline const char* to_string(Objective o) {
  switch (o) {
    case Objective::r5: return "r@5";
    case Objective::r8: return "r@8";
    case Objective::mrr: return "mrr";
    case Objective::sum: return "sum";
  }
  return "?";
}

inline ScoreMatrix fuse(const std::array<const ScoreMatrix*, 3>& parts,
                        const std::array<double, 3>& w) {
  const ScoreMatrix& a = *parts[0];
  for (const ScoreMatrix* p : parts) {
    require(p->session_ids == a.session_ids,
            "fuse: session id sets differ between matrices");
    require(p->candidate_ids == a.candidate_ids,
            "fuse: candidate id sets differ between matrices");
    require(p->target_ids == a.target_ids,
            "fuse: target id sets differ between matrices");
  }
  ScoreMatrix out;
  out.module_id = "fused";
  out.category = a.category;
  out.session_ids = a.session_ids;
  out.candidate_ids = a.candidate_ids;
  out.target_ids = a.target_ids;
  out.scores = w[0] * parts[0]->scores + w[1] * parts[1]->scores +
               w[2] * parts[2]->scores;
  return out;
}

inline ScoreMatrix fuse(const ScoreMatrix& s1, const ScoreMatrix& s2,
                        const ScoreMatrix& s3, const FusionWeights& w) {
  return fuse({&s1, &s2, &s3}, {w.w1, w.w2, w.w3});
}

// Ranks pooled over several (per-category) matrices.
inline std::vector<int> pooled_target_ranks(
    const std::vector<ScoreMatrix>& matrices) {
  std::vector<int> all;
  for (const auto& m : matrices) {
    auto r = target_ranks(m);
    all.insert(all.end(), r.begin(), r.end());
  }
  return all;
}

inline double objective_of_ranks(const std::vector<int>& ranks, Objective obj) {
  if (ranks.empty()) return 0.0;
  auto frac_within = [&](int k) {
    long hit = 0;
    for (int r : ranks) hit += r <= k ? 1 : 0;
    return static_cast<double>(hit) / ranks.size();
  };
  auto mean_rr = [&]() {
    double s = 0.0;
    for (int r : ranks) s += 1.0 / r;
    return s / ranks.size();
  };
  switch (obj) {
    case Objective::r5: return frac_within(5);
    case Objective::r8: return frac_within(8);
    case Objective::mrr: return mean_rr();
    case Objective::sum: return frac_within(5) + frac_within(8) + mean_rr();
  }
  return 0.0;
}

// One module's matrices across categories, row-aligned with the other
// modules' lists.
struct FusionInput {
  std::vector<ScoreMatrix> s1, s2, s3;

  void validate() const {
    require(!s1.empty(), "fusion input: no matrices");
    require(s1.size() == s2.size() && s2.size() == s3.size(),
            "fusion input: module matrix counts differ");
  }
};

inline double evaluate_weights(const FusionInput& in,
                               const std::array<double, 3>& w, Objective obj) {
  std::vector<ScoreMatrix> fused;
  fused.reserve(in.s1.size());
  for (std::size_t c = 0; c < in.s1.size(); ++c)
    fused.push_back(fuse({&in.s1[c], &in.s2[c], &in.s3[c]}, w));
  return objective_of_ranks(pooled_target_ranks(fused), obj);
}

struct FusionSearchConfig {
  Objective objective = Objective::r5;
  int budget = 200;  // total weight evaluations
  std::uint64_t seed = 1;
  bool iterative_refusion = false;
};

// Seeded black-box maximization over [0,1]^3. The corner and edge seeds
// guarantee single-module solutions are always candidates; the remaining
// budget splits between a uniform sweep and shrinking boxes around the
// incumbent. Ties keep the earliest trial, so runs are reproducible.
inline FusionWeights search_fusion_weights(const FusionInput& in,
                                           const FusionSearchConfig& cfg) {
  in.validate();
  require(!in.s1.empty() && !in.s1.front().session_ids.empty(),
          "fusion search: empty validation set");
  require(cfg.budget >= 1, "fusion search: budget must be positive");

  Rng rng(cfg.seed);
  std::vector<std::array<double, 3>> seeds = {
      {1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {1, 1, 0}, {1, 0, 1},
      {0, 1, 1}, {1, 1, 1}, {0.5, 0.5, 0.25}, {0.25, 0.5, 0.5}};

  std::array<double, 3> best_w = seeds[0];
  double best_v = -1.0;
  int used = 0;
  auto try_w = [&](const std::array<double, 3>& w) {
    if (used >= cfg.budget) return;
    ++used;
    const double v = evaluate_weights(in, w, cfg.objective);
    if (v > best_v) {
      best_v = v;
      best_w = w;
    }
  };

  for (const auto& s : seeds) try_w(s);
  const int sweep = (cfg.budget - used) / 2;
  for (int i = 0; i < sweep && used < cfg.budget; ++i)
    try_w({rng.uniform(), rng.uniform(), rng.uniform()});
  double radius = 0.4;
  while (used < cfg.budget) {
    std::array<double, 3> w;
    for (int d = 0; d < 3; ++d)
      w[d] = std::clamp(best_w[d] + rng.uniform(-radius, radius), 0.0, 1.0);
    try_w(w);
    radius = std::max(0.02, radius * 0.985);
  }

  FusionWeights out;
  out.w1 = best_w[0];
  out.w2 = best_w[1];
  out.w3 = best_w[2];
  out.objective = to_string(cfg.objective);
  out.objective_value = best_v;

  if (cfg.iterative_refusion) {
    // One extra round: the fused matrix joins as a fourth stream, and the
    // result collapses back to effective three-module weights.
    Rng rng2(cfg.seed ^ 0x9e3779b97f4a7c15ull);
    std::array<double, 4> best4 = {0, 0, 0, 1};
    double best4_v = best_v;
    auto eval4 = [&](const std::array<double, 4>& v) {
      const std::array<double, 3> eff = {v[0] + v[3] * out.w1,
                                         v[1] + v[3] * out.w2,
                                         v[2] + v[3] * out.w3};
      return evaluate_weights(in, eff, cfg.objective);
    };
    for (int i = 0; i < cfg.budget / 4; ++i) {
      std::array<double, 4> v = {rng2.uniform(), rng2.uniform(),
                                 rng2.uniform(), rng2.uniform()};
      const double val = eval4(v);
      if (val > best4_v) {
        best4_v = val;
        best4 = v;
      }
    }
    out.w1 = best4[0] + best4[3] * out.w1;
    out.w2 = best4[1] + best4[3] * out.w2;
    out.w3 = best4[2] + best4[3] * out.w3;
    out.objective_value = best4_v;
  }
  return out;
}

inline json fusion_weights_to_json(const FusionWeights& w) {
  return json{{"w1", w.w1},
              {"w2", w.w2},
              {"w3", w.w3},
              {"objective", w.objective},
              {"objective_value", w.objective_value}};
}

inline FusionWeights fusion_weights_from_json(const json& j) {
  FusionWeights w;
  w.w1 = j.at("w1").get<double>();
  w.w2 = j.at("w2").get<double>();
  w.w3 = j.at("w3").get<double>();
  w.objective = j.value("objective", "r@5");
  w.objective_value = j.value("objective_value", 0.0);
  require(w.w1 != 0.0 || w.w2 != 0.0 || w.w3 != 0.0,
          "fusion weights: all zero");
  return w;
}

}  // namespace mfir
