// SPDX-License-Identifier: Apache-2.0
//
// Comparative analysis scoring: a differential representation between
// candidate and reference image embeddings is matched against the
// feedback text per turn, aggregated recurrently and rectified into a
// nonnegative score (S2). The first projection is shared between the two
// difference terms, so identical images cancel exactly.
#pragma once

#include <vector>

#include "mfir/encoders.hpp"
#include "mfir/scoring.hpp"

namespace mfir {

struct ComparativeConfig {
  int d_p = 512;
  int d_t = 300;
  int d_m = 0;  // recurrent width; 0 -> d_t
  ImageEncoderConfig image;
  TextEncoderConfig text;

  int hidden() const { return d_m > 0 ? d_m : d_t; }
};

struct DifferentialRep {
  nn::Var x_diff;  // d_t
  nn::Var x_a;     // d_t
};

class ComparativeScorer : public ScoringModule {
 public:
  static ComparativeConfig normalized(ComparativeConfig c) {
    c.image.out_dim = c.d_p;
    c.text.dim = c.d_t;
    return c;
  }

  ComparativeScorer(const ComparativeConfig& config, Rng rng)
      : config_(normalized(config)),
        img_enc_(params_, config_.image, "img", rng),
        txt_enc_(params_, config_.text, "txt", rng) {
    fc1_.init(params_, "diff.fc1", 2 * config.d_p, config.d_t, rng);
    fc2_.init(params_, "diff.fc2", 2 * config.d_p + config.d_t, config.d_t,
              rng);
    gru_.init(params_, "match.gru", config.d_t, config_.hidden(), rng);
    head_.init(params_, "match.head", config_.hidden(), 1, rng);
    // start the rectified head in its active region; an all-negative
    // preactivation at init has zero subgradient and never recovers
    head_.b->value.setConstant(0.5);
  }

  std::string module_id() const override { return "comparative"; }
  nn::ParamStore& params() override { return params_; }
  const ComparativeConfig& config() const { return config_; }
  const ImageEncoder& image_encoder() const { return img_enc_; }
  nn::Linear& fc2_layer() { return fc2_; }
  nn::Linear& head_layer() { return head_; }

  // x_diff = FC1([cand .* ref ; cand]) - FC1([cand .* ref ; ref]) with one
  // shared FC1; x_a fuses [cand ; ref ; x_diff] down to the text width.
  DifferentialRep differential_rep(nn::Tape& t, nn::Var ref, nn::Var cand) const {
    require(ref.rows() == cand.rows() && ref.rows() == config_.d_p,
            "differential_rep: expected d_p=", config_.d_p, " vectors");
    nn::Var prod = nn::mul(cand, ref);
    nn::Var lhs = fc1_(t, nn::concat_rows({prod, cand}));
    nn::Var rhs = fc1_(t, nn::concat_rows({prod, ref}));
    nn::Var x_diff = nn::sub(lhs, rhs);
    nn::Var x_a = fc2_(t, nn::concat_rows({cand, ref, x_diff}));
    return {x_diff, x_a};
  }

  // Elementwise match between the differential representation and the
  // turn's text encoding.
  static nn::Var match_text(nn::Var x_a, nn::Var x_t) {
    require(x_a.rows() == x_t.rows(), "match_text: length mismatch ",
            x_a.rows(), " vs ", x_t.rows());
    return nn::mul(x_a, x_t);
  }

  // Recurrent pass over matched vectors, average pooling, affine head,
  // rectifier. Always >= 0.
  nn::Var score_from_matches(nn::Tape& t,
                             const std::vector<nn::Var>& matched) const {
    require(!matched.empty(), "score_comparative: empty turn list");
    auto states = gru_.run(t, matched);
    return nn::relu(head_(t, nn::mean_of(t, states)));
  }

  nn::Var score_session(nn::Tape& t, const std::vector<nn::Var>& turn_img_embs,
                        const std::vector<nn::Var>& turn_txt_encs,
                        nn::Var cand_emb) const {
    std::vector<nn::Var> matched;
    matched.reserve(turn_img_embs.size());
    for (std::size_t i = 0; i < turn_img_embs.size(); ++i) {
      DifferentialRep rep = differential_rep(t, turn_img_embs[i], cand_emb);
      matched.push_back(match_text(rep.x_a, turn_txt_encs[i]));
    }
    return score_from_matches(t, matched);
  }

  std::vector<std::vector<nn::Var>> score_batch(
      nn::Tape& t, const std::vector<SessionInput>& sessions,
      const std::vector<CandidateFeatures>& candidates, bool train) override {
    std::vector<nn::Mat> tensors;
    std::vector<std::pair<int, int>> turn_slots;
    for (int i = 0; i < static_cast<int>(sessions.size()); ++i)
      for (int k = 0; k < static_cast<int>(sessions[i].turns.size()); ++k) {
        tensors.push_back(sessions[i].turns[k].image_tensor);
        turn_slots.emplace_back(i, k);
      }
    const int cand_base = static_cast<int>(tensors.size());
    for (const auto& c : candidates) tensors.push_back(c.image_tensor);

    nn::Var all = img_enc_.encode_batch(t, tensors, train);
    std::vector<std::vector<nn::Var>> turn_embs(sessions.size());
    for (std::size_t s = 0; s < sessions.size(); ++s)
      turn_embs[s].resize(sessions[s].turns.size());
    for (int j = 0; j < cand_base; ++j)
      turn_embs[turn_slots[j].first][turn_slots[j].second] = nn::col(all, j);

    std::vector<std::vector<nn::Var>> scores(sessions.size());
    for (std::size_t i = 0; i < sessions.size(); ++i) {
      std::vector<nn::Var> txts;
      txts.reserve(sessions[i].turns.size());
      for (const auto& turn : sessions[i].turns)
        txts.push_back(txt_enc_.encode(t, t.constant(turn.tokens)).pooled);
      scores[i].reserve(candidates.size());
      for (std::size_t j = 0; j < candidates.size(); ++j)
        scores[i].push_back(score_session(
            t, turn_embs[i], txts, nn::col(all, cand_base + static_cast<int>(j))));
    }
    return scores;
  }

  Eigen::MatrixXd encode_candidates(
      const std::vector<CandidateFeatures>& candidates) const {
    Eigen::MatrixXd cand(config_.d_p, candidates.size());
    const int chunk = 32;
    for (std::size_t at = 0; at < candidates.size(); at += chunk) {
      const std::size_t n = std::min<std::size_t>(chunk, candidates.size() - at);
      std::vector<nn::Mat> tensors;
      for (std::size_t j = 0; j < n; ++j)
        tensors.push_back(candidates[at + j].image_tensor);
      nn::Tape t(false);
      cand.middleCols(static_cast<Eigen::Index>(at), n) =
          img_enc_.encode_batch(t, tensors, false).val();
    }
    return cand;
  }

  Eigen::MatrixXd score_matrix(const std::vector<SessionInput>& sessions,
                               const std::vector<CandidateFeatures>& candidates,
                               int threads = 1) override {
    return score_matrix_embs(sessions, encode_candidates(candidates), threads);
  }

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
      std::vector<nn::Var> embs, txts;
      for (int k = 0; k < static_cast<int>(tensors.size()); ++k)
        embs.push_back(nn::col(turn_all, k));
      for (const auto& turn : sessions[i].turns)
        txts.push_back(txt_enc_.encode(t, t.constant(turn.tokens)).pooled);
      for (Eigen::Index j = 0; j < cand.cols(); ++j) {
        nn::Var c = t.constant(cand.col(j));
        out(static_cast<Eigen::Index>(i), j) =
            nn::scalar(score_session(t, embs, txts, c));
      }
    });
    return out;
  }

 private:
  ComparativeConfig config_;
  nn::ParamStore params_;
  ImageEncoder img_enc_;
  TextEncoder txt_enc_;
  nn::Linear fc1_, fc2_;
  nn::GRUCell gru_;
  nn::Linear head_;
};

}  // namespace mfir
