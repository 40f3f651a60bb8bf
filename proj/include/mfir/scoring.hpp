// SPDX-License-Identifier: Apache-2.0
//
// Shared input shapes for the three scoring modules and the common
// module interface used by the trainer and the evaluator.
#pragma once

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "mfir/corpus.hpp"
#include "mfir/nn/layers.hpp"

namespace mfir {

struct TurnInput {
  nn::Mat image_tensor;  // 3 x (S*S); reference image of the turn
  nn::Mat tokens;        // l x d_t embedded (corrected) feedback
};

struct SessionInput {
  std::string session_id;
  Category category = Category::dress;
  std::vector<TurnInput> turns;
  std::string target_id;
  int image_count = 0;  // turns + target, the reported turn-length key
};

struct CandidateFeatures {
  std::string id;
  nn::Mat image_tensor;                       // 3 x (S*S)
  std::array<Eigen::VectorXd, 5> attributes;  // d_t each; zero when absent
};

inline double cosine_value(const Eigen::VectorXd& u, const Eigen::VectorXd& v) {
  const double nu = u.norm(), nv = v.norm();
  if (nu == 0.0 || nv == 0.0) return 0.0;
  return u.dot(v) / (nu * nv);
}

// One trainable scoring module. score_batch builds differentiable scores
// on the caller's tape (training); score_matrix is the value-only eval
// path and may parallelize internally.
class ScoringModule {
 public:
  virtual ~ScoringModule() = default;

  virtual std::string module_id() const = 0;
  virtual nn::ParamStore& params() = 0;
  const nn::ParamStore& params() const {
    return const_cast<ScoringModule*>(this)->params();
  }

  virtual std::vector<std::vector<nn::Var>> score_batch(
      nn::Tape& t, const std::vector<SessionInput>& sessions,
      const std::vector<CandidateFeatures>& candidates, bool train) = 0;

  virtual Eigen::MatrixXd score_matrix(
      const std::vector<SessionInput>& sessions,
      const std::vector<CandidateFeatures>& candidates,
      int threads = 1) = 0;
};

}  // namespace mfir
