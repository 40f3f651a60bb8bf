// SPDX-License-Identifier: Apache-2.0
//
// Composite representation scoring: compose each turn's image and text
// into one vector, aggregate the turns with a recurrent unit plus
// average pooling, and score candidates by cosine similarity (S1).
#pragma once

#include <iostream>
#include <vector>

#include "mfir/encoders.hpp"
#include "mfir/scoring.hpp"

namespace mfir {

enum class ComposerKind { gated_residual, concat_mlp };

inline const char* to_string(ComposerKind k) {
  return k == ComposerKind::gated_residual ? "gated-residual" : "concat-mlp";
}

inline ComposerKind composer_from_string(const std::string& s) {
  if (s == "gated-residual") return ComposerKind::gated_residual;
  if (s == "concat-mlp") return ComposerKind::concat_mlp;
  fail("unknown composer '", s, "' (expected gated-residual|concat-mlp)");
}

struct CompositeConfig {
  int d_p = 512;
  int d_t = 300;
  int d_h = 0;  // recurrent width; 0 -> d_p
  ComposerKind composer = ComposerKind::gated_residual;
  ImageEncoderConfig image;
  TextEncoderConfig text;

  int hidden() const { return d_h > 0 ? d_h : d_p; }
};

class CompositeScorer : public ScoringModule {
 public:
  // Encoder widths follow d_p / d_t.
  static CompositeConfig normalized(CompositeConfig c) {
    c.image.out_dim = c.d_p;
    c.text.dim = c.d_t;
    return c;
  }

  CompositeScorer(const CompositeConfig& config, Rng rng)
      : config_(normalized(config)),
        img_enc_(params_, config_.image, "img", rng),
        txt_enc_(params_, config_.text, "txt", rng) {
    txt_proj_.init(params_, "compose.txt_proj", config.d_t, config.d_p, rng);
    gate_.init(params_, "compose.gate", 2 * config.d_p, config.d_p, rng);
    fuse1_.init(params_, "compose.fuse1", 2 * config.d_p, config.d_p, rng);
    fuse2_.init(params_, "compose.fuse2", config.d_p, config.d_p, rng);
    gru_.init(params_, "agg.gru", config.d_p, config_.hidden(), rng);
    out_proj_.init(params_, "agg.proj", config_.hidden(), config.d_p, rng);
  }

  std::string module_id() const override { return "composite"; }
  nn::ParamStore& params() override { return params_; }
  const CompositeConfig& config() const { return config_; }
  const ImageEncoder& image_encoder() const { return img_enc_; }
  const TextEncoder& text_encoder() const { return txt_enc_; }
  nn::Linear& gate_layer() { return gate_; }
  nn::Linear& fuse_layer1() { return fuse1_; }
  nn::Linear& fuse_layer2() { return fuse2_; }
  nn::Linear& output_projection() { return out_proj_; }

  // One composed vector per turn (image d_p, text d_t).
  nn::Var compose(nn::Tape& t, nn::Var x_p, nn::Var x_t) const {
    require(x_p.rows() == config_.d_p, "compose: image vector has length ",
            x_p.rows(), ", expected ", config_.d_p);
    require(x_t.rows() == config_.d_t, "compose: text vector has length ",
            x_t.rows(), ", expected ", config_.d_t);
    nn::Var joint = nn::concat_rows({x_p, txt_proj_(t, x_t)});
    nn::Var f = fuse2_(t, nn::relu(fuse1_(t, joint)));
    if (config_.composer == ComposerKind::concat_mlp) return f;
    nn::Var g = nn::sigmoid(gate_(t, joint));
    nn::Var ones = t.constant(nn::Mat::Ones(config_.d_p, 1));
    return nn::add(nn::mul(g, x_p), nn::mul(nn::sub(ones, g), f));
  }

  // Recurrent pass in turn order, average-pooled then projected.
  nn::Var aggregate_turns(nn::Tape& t,
                          const std::vector<nn::Var>& composed) const {
    require(!composed.empty(), "aggregate_turns: empty turn list");
    auto states = gru_.run(t, composed);
    return out_proj_(t, nn::mean_of(t, states));
  }

  // Exposed for tests: the pooled (pre-projection) recurrent state.
  nn::Var pooled_state(nn::Tape& t, const std::vector<nn::Var>& composed) const {
    return nn::mean_of(t, gru_.run(t, composed));
  }

  nn::Var session_embedding(nn::Tape& t, const SessionInput& session,
                            const std::vector<nn::Var>& turn_image_embs,
                            bool /*train*/) const {
    std::vector<nn::Var> composed;
    composed.reserve(session.turns.size());
    for (std::size_t i = 0; i < session.turns.size(); ++i) {
      nn::Var x_t = txt_enc_.encode(t, t.constant(session.turns[i].tokens)).pooled;
      composed.push_back(compose(t, turn_image_embs[i], x_t));
    }
    return aggregate_turns(t, composed);
  }

  static nn::Var score(nn::Tape& t, nn::Var session_emb, nn::Var cand_emb) {
    nn::Var s = nn::cosine(session_emb, cand_emb);
    return s;
  }

  std::vector<std::vector<nn::Var>> score_batch(
      nn::Tape& t, const std::vector<SessionInput>& sessions,
      const std::vector<CandidateFeatures>& candidates, bool train) override {
    // Encode every turn image and every candidate image in one batch so
    // normalization statistics cover the whole minibatch.
    std::vector<nn::Mat> tensors;
    std::vector<std::pair<int, int>> turn_slots;  // (session, turn) order
    for (int i = 0; i < static_cast<int>(sessions.size()); ++i)
      for (int k = 0; k < static_cast<int>(sessions[i].turns.size()); ++k) {
        tensors.push_back(sessions[i].turns[k].image_tensor);
        turn_slots.emplace_back(i, k);
      }
    const int cand_base = static_cast<int>(tensors.size());
    for (const auto& c : candidates) tensors.push_back(c.image_tensor);

    nn::Var all = img_enc_.encode_batch(t, tensors, train);
    std::vector<std::vector<nn::Var>> turn_embs(sessions.size());
    for (auto& v : turn_embs) v.clear();
    for (std::size_t s = 0; s < sessions.size(); ++s)
      turn_embs[s].resize(sessions[s].turns.size());
    for (int j = 0; j < cand_base; ++j)
      turn_embs[turn_slots[j].first][turn_slots[j].second] = nn::col(all, j);

    std::vector<nn::Var> cand_embs;
    cand_embs.reserve(candidates.size());
    for (std::size_t j = 0; j < candidates.size(); ++j)
      cand_embs.push_back(nn::col(all, cand_base + static_cast<int>(j)));

    std::vector<std::vector<nn::Var>> scores(sessions.size());
    for (std::size_t i = 0; i < sessions.size(); ++i) {
      nn::Var emb = session_embedding(t, sessions[i], turn_embs[i], train);
      scores[i].reserve(candidates.size());
      for (std::size_t j = 0; j < candidates.size(); ++j)
        scores[i].push_back(score(t, emb, cand_embs[j]));
    }
    return scores;
  }

  // Frozen-statistics candidate embeddings, encoded in chunks.
  Eigen::MatrixXd encode_candidates(
      const std::vector<CandidateFeatures>& candidates) const {
    Eigen::MatrixXd cand(config_.d_p, candidates.size());
    const int chunk = 32;
    for (std::size_t at = 0; at < candidates.size(); at += chunk) {
      const std::size_t n = std::min<std::size_t>(chunk, candidates.size() - at);
      std::vector<nn::Mat> tensors;
      tensors.reserve(n);
      for (std::size_t j = 0; j < n; ++j)
        tensors.push_back(candidates[at + j].image_tensor);
      nn::Tape t(false);
      nn::Var e = img_enc_.encode_batch(t, tensors, false);
      cand.middleCols(static_cast<Eigen::Index>(at), n) = e.val();
    }
    return cand;
  }

  Eigen::MatrixXd score_matrix(const std::vector<SessionInput>& sessions,
                               const std::vector<CandidateFeatures>& candidates,
                               int threads = 1) override {
    return score_matrix_embs(sessions, encode_candidates(candidates), threads);
  }

  // Scores against precomputed candidate embeddings (d_p x C), the same
  // vectors a candidate index stores.
  Eigen::MatrixXd score_matrix_embs(const std::vector<SessionInput>& sessions,
                                    const Eigen::MatrixXd& cand,
                                    int threads = 1) const {
    Eigen::MatrixXd out(sessions.size(), cand.cols());
    parallel_for(sessions.size(), threads, [&](std::size_t i) {
      nn::Tape t(false);
      std::vector<nn::Mat> tensors;
      for (const auto& turn : sessions[i].turns)
        tensors.push_back(turn.image_tensor);
      nn::Var turn_all = img_enc_.encode_batch(t, tensors, false);
      std::vector<nn::Var> embs;
      for (int k = 0; k < static_cast<int>(tensors.size()); ++k)
        embs.push_back(nn::col(turn_all, k));
      Eigen::VectorXd emb =
          session_embedding(t, sessions[i], embs, false).val().col(0);
      if (emb.norm() == 0.0)
        std::cerr << "[composite] warning: zero-norm session embedding for '"
                  << sessions[i].session_id << "', scores default to 0\n";
      for (Eigen::Index j = 0; j < cand.cols(); ++j)
        out(static_cast<Eigen::Index>(i), j) = cosine_value(emb, cand.col(j));
    });
    return out;
  }

 private:
  CompositeConfig config_;
  nn::ParamStore params_;
  ImageEncoder img_enc_;
  TextEncoder txt_enc_;
  nn::Linear txt_proj_, gate_, fuse1_, fuse2_;
  nn::GRUCell gru_;
  nn::Linear out_proj_;
};

}  // namespace mfir
