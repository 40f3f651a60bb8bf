// SPDX-License-Identifier: Apache-2.0
//
// Max-margin triplet training with batch-hard mining, best-checkpoint
// tracking against validation R@5, and checkpoint persistence.
#pragma once

#include <cmath>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mfir/data.hpp"
#include "mfir/fusion.hpp"
#include "mfir/metrics.hpp"
#include "mfir/scoring.hpp"

namespace mfir {

// Hinge: zero iff the positive beats the negative by at least the margin.
inline double triplet_loss(double s_pos, double s_neg, double margin) {
  require(margin > 0.0, "triplet_loss: margin must be positive");
  return std::max(0.0, margin + s_neg - s_pos);
}

struct MiningOutcome {
  // anchor -> hardest negative column; the positive is the anchor's own
  // column (diagonal convention).
  std::vector<std::pair<int, int>> pairs;
  int skipped = 0;  // anchors whose every other target matches their own
};

// scores[i][j] = anchor session i against the target image of session j.
// The hardest negative is the highest-scoring j != i whose target image
// differs from anchor i's target.
inline MiningOutcome batch_hard_mine(const Eigen::MatrixXd& scores,
                                     const std::vector<std::string>& targets) {
  require(scores.rows() == scores.cols(), "batch_hard_mine: square matrix");
  require(static_cast<std::size_t>(scores.rows()) == targets.size(),
          "batch_hard_mine: target list size mismatch");
  require(scores.rows() >= 2, "batch_hard_mine: batch too small");
  MiningOutcome out;
  for (int i = 0; i < scores.rows(); ++i) {
    int best = -1;
    for (int j = 0; j < scores.cols(); ++j) {
      if (j == i || targets[j] == targets[i]) continue;
      if (best < 0 || scores(i, j) > scores(i, best)) best = j;
    }
    if (best < 0) {
      ++out.skipped;
      continue;
    }
    out.pairs.emplace_back(i, best);
  }
  if (out.skipped > 0)
    std::cerr << "[mine] warning: " << out.skipped
              << " anchor(s) had no valid negative and were skipped\n";
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr int kCheckpointVersion = 1;

struct ModelCheckpoint {
  std::string module_id;
  int format_version = kCheckpointVersion;
  std::uint64_t config_hash = 0;
  int epoch = -1;
  json metrics = json::object();
  std::vector<std::uint8_t> blob;

  // Writes <base>.bin (parameter blob) and <base>.json (manifest).
  void save(const std::filesystem::path& base) const {
    write_file_bytes(base.string() + ".bin", blob);
    json manifest{{"module_id", module_id},
                  {"version", format_version},
                  {"config_hash", strf(std::hex, config_hash)},
                  {"epoch", epoch},
                  {"metrics", metrics},
                  {"blob_checksum",
                   strf(std::hex, fnv1a64(blob.data(), blob.size()))},
                  {"blob_file", base.filename().string() + ".bin"}};
    std::ofstream out(base.string() + ".json");
    require(out.good(), "cannot write checkpoint manifest: ", base.string());
    out << manifest.dump(1) << "\n";
  }

  static ModelCheckpoint load(const std::filesystem::path& base) {
    std::ifstream in(base.string() + ".json");
    require(in.good(), "cannot open checkpoint manifest: ",
            base.string() + ".json");
    json manifest;
    in >> manifest;
    ModelCheckpoint c;
    c.module_id = manifest.at("module_id").get<std::string>();
    c.format_version = manifest.at("version").get<int>();
    require(c.format_version == kCheckpointVersion, "checkpoint '",
            base.string(), "' has format version ", c.format_version,
            ", this build reads version ", kCheckpointVersion);
    c.config_hash = std::stoull(
        manifest.at("config_hash").get<std::string>(), nullptr, 16);
    c.epoch = manifest.at("epoch").get<int>();
    c.metrics = manifest.value("metrics", json::object());
    c.blob = read_file_bytes(base.parent_path() /
                             manifest.at("blob_file").get<std::string>());
    const std::string want = manifest.at("blob_checksum").get<std::string>();
    const std::string got =
        strf(std::hex, fnv1a64(c.blob.data(), c.blob.size()));
    require(want == got, "checkpoint '", base.string(),
            "': parameter blob is corrupted (checksum mismatch)");
    return c;
  }
};

inline ModelCheckpoint make_checkpoint(ScoringModule& module,
                                       std::uint64_t config_hash, int epoch,
                                       json metrics) {
  ModelCheckpoint c;
  c.module_id = module.module_id();
  c.config_hash = config_hash;
  c.epoch = epoch;
  c.metrics = std::move(metrics);
  c.blob = module.params().serialize();
  return c;
}

inline void apply_checkpoint(ScoringModule& module, const ModelCheckpoint& c,
                             std::uint64_t expected_config_hash) {
  require(c.module_id == module.module_id(), "checkpoint is for module '",
          c.module_id, "', expected '", module.module_id(), "'");
  require(c.config_hash == expected_config_hash,
          "checkpoint config hash ", strf(std::hex, c.config_hash),
          " does not match the current config ",
          strf(std::hex, expected_config_hash));
  module.params().deserialize(c.blob);
}

// ---------------------------------------------------------------------------
// Training loop

struct TrainConfig {
  int epochs = 150;
  double lr = 1e-4;
  double margin = 0.2;
  int batch_size = 16;
  std::uint64_t seed = 1;
  int threads = 1;
  AugmentParams augment;
  bool augment_images = true;

  void validate() const {
    require(epochs >= 1, "train: epochs must be positive");
    require(lr > 0.0, "train: learning rate must be positive");
    require(margin > 0.0, "train: margin must be positive");
    require(batch_size >= 2, "train: batch size must be at least 2");
  }
};

struct EpochLog {
  int epoch = 0;
  double mean_loss = 0.0;
  double val_r5 = 0.0;
  int anchors = 0;
  int skipped = 0;
};

struct TrainOutcome {
  ModelCheckpoint checkpoint;  // best validation R@5
  std::vector<EpochLog> log;
  std::vector<ScoreMatrix> best_val_matrices;  // per category
  double best_val_r5 = -1.0;
  int best_epoch = -1;
};

namespace detail {

struct ValSet {
  std::vector<SessionInput> sessions;
  std::vector<CandidateFeatures> pool;
  Category category;
};

inline std::vector<ValSet> build_val_sets(const Dataset& d,
                                          const std::vector<int>& val_idx,
                                          int input_size) {
  std::map<Category, ValSet> by_cat;
  for (int i : val_idx) {
    const Session& s = d.sessions.at(i);
    by_cat[s.category].sessions.push_back(
        make_session_input(d, s, input_size));
    by_cat[s.category].category = s.category;
  }
  std::vector<ValSet> out;
  for (auto& [cat, set] : by_cat) {
    set.pool = category_candidates(d, cat, input_size);
    out.push_back(std::move(set));
  }
  return out;
}

inline ScoreMatrix module_matrix(ScoringModule& module, const ValSet& v,
                                 int threads) {
  ScoreMatrix m;
  m.module_id = module.module_id();
  m.category = v.category;
  for (const auto& s : v.sessions) {
    m.session_ids.push_back(s.session_id);
    m.target_ids.push_back(s.target_id);
  }
  for (const auto& c : v.pool) m.candidate_ids.push_back(c.id);
  m.scores = module.score_matrix(v.sessions, v.pool, threads);
  return m;
}

}  // namespace detail

// Trains one module, keeping the parameters of the epoch with the best
// validation R@5 and that epoch's per-category score matrices (the input
// of the fusion stage). Seed-fixed runs are reproducible.
inline TrainOutcome train_module(ScoringModule& module, const Dataset& data,
                                 const SplitIndices& split,
                                 const TrainConfig& config,
                                 std::uint64_t config_hash, int input_size) {
  config.validate();
  require(!split.train.empty(), "train: empty training split");
  require(!split.val.empty(), "train: empty validation split");

  Rng rng(config.seed);
  nn::Adam opt(module.params(), config.lr);
  auto val_sets = detail::build_val_sets(data, split.val, input_size);

  // Token embeddings never change across epochs; cache per session.
  std::map<int, SessionInput> clean_inputs;
  for (int i : split.train)
    clean_inputs.emplace(
        i, make_session_input(data, data.sessions.at(i), input_size));

  TrainOutcome out;
  std::vector<nn::Mat> best_params;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    // per-category batches, deterministic order
    std::map<Category, std::vector<int>> by_cat;
    for (int i : split.train) by_cat[data.sessions.at(i).category].push_back(i);
    std::vector<std::vector<int>> batches;
    for (auto& [cat, idx] : by_cat) {
      rng.shuffle(idx);
      for (std::size_t at = 0; at < idx.size(); at += config.batch_size) {
        std::vector<int> b(idx.begin() + at,
                           idx.begin() + std::min(idx.size(),
                                                  at + config.batch_size));
        if (b.size() >= 2) batches.push_back(std::move(b));
      }
    }
    rng.shuffle(batches);
    Rng aug_rng = rng.fork(epoch);

    double loss_sum = 0.0;
    long loss_count = 0;
    EpochLog log;
    log.epoch = epoch;

    for (const auto& batch : batches) {
      std::vector<SessionInput> sessions;
      std::vector<CandidateFeatures> cands;
      for (int i : batch) {
        const Session& s = data.sessions.at(i);
        if (config.augment_images) {
          sessions.push_back(make_session_input(data, s, input_size, &aug_rng,
                                                &config.augment));
          // reuse cached token embeddings
          for (std::size_t k = 0; k < sessions.back().turns.size(); ++k)
            sessions.back().turns[k].tokens =
                clean_inputs.at(i).turns[k].tokens;
          cands.push_back(make_candidate_features(
              data, s.target_image_id, input_size, &aug_rng, &config.augment));
        } else {
          sessions.push_back(clean_inputs.at(i));
          cands.push_back(
              make_candidate_features(data, s.target_image_id, input_size));
        }
      }

      nn::Tape tape(true);
      auto score_vars = module.score_batch(tape, sessions, cands, true);
      Eigen::MatrixXd score_vals(batch.size(), batch.size());
      for (std::size_t i = 0; i < batch.size(); ++i)
        for (std::size_t j = 0; j < batch.size(); ++j)
          score_vals(i, j) = nn::scalar(score_vars[i][j]);
      std::vector<std::string> targets;
      for (const auto& c : cands) targets.push_back(c.id);

      auto mined = batch_hard_mine(score_vals, targets);
      log.skipped += mined.skipped;
      if (mined.pairs.empty()) continue;

      std::vector<nn::Var> losses;
      losses.reserve(mined.pairs.size());
      for (const auto& [i, j] : mined.pairs)
        losses.push_back(
            nn::hinge(score_vars[i][i], score_vars[i][j], config.margin));
      nn::Var loss = nn::mean_all(nn::concat_rows(losses));
      const double loss_val = nn::scalar(loss);
      require(std::isfinite(loss_val), "train: non-finite loss at epoch ",
              epoch, " (diverged: lower the learning rate or check the ",
              "input data)");
      loss_sum += loss_val;
      ++loss_count;
      log.anchors += static_cast<int>(mined.pairs.size());

      module.params().zero_grad();
      tape.backward(loss);
      opt.step();
    }

    log.mean_loss = loss_count > 0 ? loss_sum / loss_count : 0.0;

    std::vector<ScoreMatrix> val_matrices;
    std::vector<int> ranks;
    for (const auto& v : val_sets) {
      val_matrices.push_back(
          detail::module_matrix(module, v, config.threads));
      auto r = target_ranks(val_matrices.back());
      ranks.insert(ranks.end(), r.begin(), r.end());
    }
    log.val_r5 = objective_of_ranks(ranks, Objective::r5);
    out.log.push_back(log);

    if (log.val_r5 > out.best_val_r5) {
      out.best_val_r5 = log.val_r5;
      out.best_epoch = epoch;
      best_params = module.params().snapshot();
      out.best_val_matrices = std::move(val_matrices);
    }
    std::cerr << "[train " << module.module_id() << "] epoch " << epoch
              << " loss " << log.mean_loss << " val r@5 " << log.val_r5
              << (out.best_epoch == epoch ? " *" : "") << "\n";
  }

  if (!best_params.empty()) module.params().restore(best_params);
  out.checkpoint = make_checkpoint(
      module, config_hash, out.best_epoch,
      json{{"val_r5", out.best_val_r5}, {"epochs_run", config.epochs}});
  return out;
}

}  // namespace mfir
