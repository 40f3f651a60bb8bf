// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include "mfir/comparative.hpp"
#include "testutil.hpp"

using namespace mfir;
using nn::Mat;
using nn::Var;

namespace {

ComparativeConfig small_config() {
  ComparativeConfig cfg;
  cfg.d_p = 6;
  cfg.d_t = 4;
  cfg.image.arch = "tiny";
  cfg.image.input_size = 16;
  cfg.text.blocks = 2;
  return cfg;
}

Mat randv(Rng& rng, int n) {
  Mat m(n, 1);
  for (int i = 0; i < n; ++i) m(i, 0) = rng.normal();
  return m;
}

bool not_image_param(const std::string& name) {
  return name.rfind("img.", 0) != 0;
}

}  // namespace

TEST_CASE("differential representation vanishes when candidate equals reference") {
  ComparativeScorer mod(small_config(), Rng(1));
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    nn::Tape t(false);
    Var x = t.constant(randv(rng, 6));
    auto rep = mod.differential_rep(t, x, x);
    REQUIRE(rep.x_diff.val().cwiseAbs().maxCoeff() <= 1e-9);
  }
}

TEST_CASE("with the diff slot zeroed, x_a depends only on cand and ref") {
  ComparativeScorer mod(small_config(), Rng(2));
  // zero the FC2 columns that multiply x_diff
  Mat& W = mod.fc2_layer().W->value;
  W.middleCols(2 * 6, 4).setZero();

  Rng rng(5);
  nn::Tape t(false);
  Var ref = t.constant(randv(rng, 6));
  Var cand = t.constant(randv(rng, 6));
  auto rep = mod.differential_rep(t, ref, cand);

  Mat stacked(2 * 6 + 4, 1);
  stacked << cand.val(), ref.val(), Mat::Zero(4, 1);
  Mat expect = W * stacked + mod.fc2_layer().b->value;
  REQUIRE((rep.x_a.val() - expect).norm() < 1e-12);
}

TEST_CASE("differential_rep rejects dimension mismatches") {
  ComparativeScorer mod(small_config(), Rng(3));
  nn::Tape t(false);
  Rng rng(7);
  REQUIRE_THROWS_AS(
      mod.differential_rep(t, t.constant(randv(rng, 5)),
                           t.constant(randv(rng, 5))),
      Error);
}

TEST_CASE("match_text is the elementwise product and commutes") {
  nn::Tape t(false);
  Mat a(2, 1), b(2, 1);
  a << 1, 2;
  b << 3, -1;
  Mat expect(2, 1);
  expect << 3, -2;
  REQUIRE((ComparativeScorer::match_text(t.constant(a), t.constant(b)).val() -
           expect)
              .norm() == 0.0);

  Mat ones = Mat::Ones(2, 1);
  REQUIRE((ComparativeScorer::match_text(t.constant(ones), t.constant(b)).val() -
           b).norm() == 0.0);
  REQUIRE(ComparativeScorer::match_text(t.constant(Mat::Zero(2, 1)),
                                        t.constant(b))
              .val()
              .isZero());

  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    Mat u = randv(rng, 4), v = randv(rng, 4);
    Mat ab =
        ComparativeScorer::match_text(t.constant(u), t.constant(v)).val();
    Mat ba =
        ComparativeScorer::match_text(t.constant(v), t.constant(u)).val();
    REQUIRE((ab - ba).norm() == 0.0);
  }

  REQUIRE_THROWS_AS(ComparativeScorer::match_text(t.constant(Mat::Zero(3, 1)),
                                                  t.constant(Mat::Zero(4, 1))),
                    Error);
}

TEST_CASE("comparative score is nonnegative") {
  ComparativeScorer mod(small_config(), Rng(4));
  Rng rng(11);
  for (int trial = 0; trial < 1000; ++trial) {
    nn::Tape t(false);
    std::vector<Var> matched;
    const int n = 1 + static_cast<int>(rng.below(4));
    for (int i = 0; i < n; ++i) matched.push_back(t.constant(randv(rng, 4)));
    REQUIRE(nn::scalar(mod.score_from_matches(t, matched)) >= 0.0);
  }
}

TEST_CASE("rectified head clamps negative activations to zero") {
  ComparativeScorer mod(small_config(), Rng(5));
  mod.head_layer().W->value.setZero();
  mod.head_layer().b->value.setConstant(-1.0);
  Rng rng(13);
  nn::Tape t(false);
  REQUIRE(nn::scalar(mod.score_from_matches(t, {t.constant(randv(rng, 4))})) ==
          0.0);
}

TEST_CASE("comparative chain gradients match finite differences") {
  ComparativeScorer mod(small_config(), Rng(6));
  nn::ParamStore& params = mod.params();
  nn::Parameter& ref1 = params.add("in.ref1", 6, 1);
  nn::Parameter& ref2 = params.add("in.ref2", 6, 1);
  nn::Parameter& cand = params.add("in.cand", 6, 1);
  nn::Parameter& txt1 = params.add("in.txt1", 4, 1);
  nn::Parameter& txt2 = params.add("in.txt2", 4, 1);
  Rng rng(17);
  for (auto* p : {&ref1, &ref2, &cand, &txt1, &txt2})
    p->value = randv(rng, static_cast<int>(p->value.rows()));

  auto forward = [&](nn::Tape& t) {
    return mod.score_session(t, {t.leaf(ref1), t.leaf(ref2)},
                             {t.leaf(txt1), t.leaf(txt2)}, t.leaf(cand));
  };
  REQUIRE(testutil::gradient_check(params, forward, 1e-5, not_image_param) <
          1e-4);
}

TEST_CASE("score_from_matches requires at least one turn") {
  ComparativeScorer mod(small_config(), Rng(7));
  nn::Tape t(false);
  REQUIRE_THROWS_AS(mod.score_from_matches(t, {}), Error);
}
