// SPDX-License-Identifier: Apache-2.0
//
// Fashion attribute scoring: feedback history is encoded with a
// bidirectional recurrent unit; a two-stage mutual attention first lets
// each candidate attribute attend over the feedback turns, then weights
// the five per-attribute cosine matches into the final score (S3).
#pragma once

#include <array>
#include <vector>

#include "mfir/encoders.hpp"
#include "mfir/scoring.hpp"

namespace mfir {

struct AttributeConfig {
  int d_t = 300;
  int d_b = 0;  // per-direction recurrent width; 0 -> d_t

  int direction_width() const { return d_b > 0 ? d_b : d_t; }
  int state_width() const { return 2 * direction_width(); }
};

struct FeedbackHistory {
  std::vector<nn::Var> states;  // one per turn, forward|backward concat
  nn::Var pooled;               // arithmetic mean of states
};

// Softmax over the entries of a column vector.
inline nn::Var softmax_col(nn::Var v) {
  return nn::transpose(nn::softmax_rows(nn::transpose(v)));
}

class AttributeScorer : public ScoringModule {
 public:
  AttributeScorer(const AttributeConfig& config, Rng rng) : config_(config) {
    const int db = config_.direction_width();
    const int da = config_.state_width();
    fwd_.init(params_, "hist.fwd", config.d_t, db, rng);
    bwd_.init(params_, "hist.bwd", config.d_t, db, rng);
    turn_attn_.init(params_, "attn.turn", config.d_t + da, 1, rng);
    attr_attn_.init(params_, "attn.attr", da + config.d_t, 1, rng);
    state_proj_.init(params_, "attn.state_proj", da, config.d_t, rng);
  }

  std::string module_id() const override { return "attribute"; }
  nn::ParamStore& params() override { return params_; }
  const AttributeConfig& config() const { return config_; }

  // Bidirectional pass over per-turn vectors (token means of the raw
  // embeddings).
  FeedbackHistory encode_history(nn::Tape& t,
                                 const std::vector<nn::Var>& turn_vecs) const {
    require(!turn_vecs.empty(), "encode_history: empty feedback history");
    auto fwd_states = fwd_.run(t, turn_vecs);
    std::vector<nn::Var> reversed(turn_vecs.rbegin(), turn_vecs.rend());
    auto bwd_states = bwd_.run(t, reversed);
    FeedbackHistory h;
    const std::size_t n = turn_vecs.size();
    h.states.reserve(n);
    for (std::size_t i = 0; i < n; ++i)
      h.states.push_back(
          nn::concat_rows({fwd_states[i], bwd_states[n - 1 - i]}));
    h.pooled = nn::mean_of(t, h.states);
    return h;
  }

  // Stage one: the candidate attribute attends over the feedback turns.
  // Returns the attention-weighted state and the turn weights.
  std::pair<nn::Var, nn::Var> candidate_to_feedback(
      nn::Tape& t, const FeedbackHistory& history, nn::Var attribute) const {
    std::vector<nn::Var> logits;
    logits.reserve(history.states.size());
    for (const auto& h : history.states)
      logits.push_back(
          nn::tanh_v(turn_attn_(t, nn::concat_rows({attribute, h}))));
    nn::Var alpha = softmax_col(nn::concat_rows(logits));  // n x 1
    nn::Var stacked = nn::concat_cols(history.states);     // da x n
    return {nn::matmul(stacked, alpha), alpha};
  }

  // Cosine between the projected attentive state and the attribute
  // vector; zero attribute slots score 0.
  nn::Var attribute_similarity(nn::Tape& t, nn::Var attentive_state,
                               nn::Var attribute) const {
    return nn::cosine(state_proj_(t, attentive_state), attribute);
  }

  // Stage two: the pooled feedback weights the five attribute matches.
  // Returns S3 and the attribute weights beta.
  std::pair<nn::Var, nn::Var> feedback_to_candidate(
      nn::Tape& t, nn::Var pooled, const std::vector<nn::Var>& attributes,
      const std::vector<nn::Var>& similarities) const {
    require(attributes.size() == 5 && similarities.size() == 5,
            "feedback_to_candidate: expected 5 attribute slots");
    std::vector<nn::Var> logits;
    logits.reserve(5);
    for (const auto& a : attributes)
      logits.push_back(nn::tanh_v(attr_attn_(t, nn::concat_rows({pooled, a}))));
    nn::Var beta = softmax_col(nn::concat_rows(logits));  // 5 x 1
    nn::Var sims = nn::concat_rows(similarities);         // 5 x 1
    return {nn::matmul(nn::transpose(beta), sims), beta};
  }

  nn::Var score_session(nn::Tape& t, const FeedbackHistory& history,
                        const std::vector<nn::Var>& attributes) const {
    std::vector<nn::Var> sims;
    sims.reserve(5);
    for (const auto& a : attributes) {
      auto [state, alpha] = candidate_to_feedback(t, history, a);
      sims.push_back(attribute_similarity(t, state, a));
    }
    return feedback_to_candidate(t, history.pooled, attributes, sims).first;
  }

  static std::vector<nn::Var> attribute_vars(
      nn::Tape& t, const CandidateFeatures& candidate) {
    std::vector<nn::Var> out;
    out.reserve(5);
    for (const auto& a : candidate.attributes) out.push_back(t.constant(a));
    return out;
  }

  // Per-turn inputs: token mean of the raw embedded feedback.
  static std::vector<nn::Var> turn_vectors(nn::Tape& t,
                                           const SessionInput& session) {
    std::vector<nn::Var> vecs;
    vecs.reserve(session.turns.size());
    for (const auto& turn : session.turns) {
      require(turn.tokens.rows() > 0, "attribute scorer: empty feedback in '",
              session.session_id, "'");
      vecs.push_back(nn::mean_cols(nn::transpose(t.constant(turn.tokens))));
    }
    return vecs;
  }

  std::vector<std::vector<nn::Var>> score_batch(
      nn::Tape& t, const std::vector<SessionInput>& sessions,
      const std::vector<CandidateFeatures>& candidates, bool /*train*/) override {
    std::vector<std::vector<nn::Var>> scores(sessions.size());
    for (std::size_t i = 0; i < sessions.size(); ++i) {
      FeedbackHistory history = encode_history(t, turn_vectors(t, sessions[i]));
      scores[i].reserve(candidates.size());
      for (const auto& c : candidates)
        scores[i].push_back(score_session(t, history, attribute_vars(t, c)));
    }
    return scores;
  }

  Eigen::MatrixXd score_matrix(const std::vector<SessionInput>& sessions,
                               const std::vector<CandidateFeatures>& candidates,
                               int threads = 1) override {
    Eigen::MatrixXd out(sessions.size(), candidates.size());
    parallel_for(sessions.size(), threads, [&](std::size_t i) {
      nn::Tape t(false);
      FeedbackHistory history = encode_history(t, turn_vectors(t, sessions[i]));
      for (std::size_t j = 0; j < candidates.size(); ++j)
        out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
            nn::scalar(score_session(t, history, attribute_vars(t, candidates[j])));
    });
    return out;
  }

 private:
  AttributeConfig config_;
  nn::ParamStore params_;
  nn::GRUCell fwd_, bwd_;
  nn::Linear turn_attn_, attr_attn_, state_proj_;
};

}  // namespace mfir
