#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "gvd/decoder.hpp"
#include "gvd/errors.hpp"
#include "gvd/gradcheck.hpp"
#include "invariants.hpp"

using namespace gvd;

TEST(Presets, MirrorSupervisionRows) {
  struct Row {
    const char* name;
    double a, b, c;
    bool sa;
  };
  const Row rows[] = {
      {"unsup-noselfattn", 0, 0, 0, false}, {"unsup", 0, 0, 0, true},
      {"sup-attn", 0.05, 0, 0, true},       {"sup-grd", 0, 0.5, 0, true},
      {"sup-cls", 0, 0, 0.1, true},         {"sup-attn-grd", 0.5, 0.5, 0, true},
      {"sup-attn-cls", 0.05, 0, 0.1, true}, {"sup-grd-cls", 0, 0.05, 0.1, true},
      {"sup-attn-grd-cls", 0.1, 0.1, 0.1, true}};
  EXPECT_EQ(lambda_presets().size(), std::size(rows));
  for (const auto& r : rows) {
    const auto& p = find_preset(r.name);
    EXPECT_EQ(p.weights.alpha, r.a) << r.name;
    EXPECT_EQ(p.weights.beta, r.b) << r.name;
    EXPECT_EQ(p.weights.cls, r.c) << r.name;
    EXPECT_EQ(p.self_attention, r.sa) << r.name;
  }
  EXPECT_THROW(find_preset("sup-everything"), ConfigError);
}

TEST(JointLoss, Examples) {
  const LossComponents c{1.0, 0.2, 0.4, 0.6};
  EXPECT_EQ(joint_loss(c, {0, 0, 0}).total, 1.0);
  EXPECT_NEAR(joint_loss(c, {0.5, 0.5, 0.5}).total, 1.6, 1e-15);
  EXPECT_THROW(joint_loss(c, {-0.1, 0, 0}), ConfigError);
  const auto b = joint_loss(c, {0.05, 0, 0.1});
  EXPECT_EQ(b.sent, 1.0);
  EXPECT_EQ(b.grd, 0.6);
}

TEST(Normalization, ThousandRandomTrials) {
  const auto r = oracle::check_normalization(1000);
  EXPECT_EQ(r.trials, 1000);
  EXPECT_LT(r.col_stochastic, 1e-6);
  EXPECT_LT(r.row_stochastic, 1e-6);
  EXPECT_LT(r.alpha_simplex, 1e-6);
  EXPECT_LT(r.word_dist, 1e-6);
  EXPECT_LT(r.loss_identity, 1e-6);
}

TEST(TeacherForcing, StepCountRecordsAndReplay) {
  const TinyInstance inst = make_tiny_instance(3);
  const ForwardPass a = teacher_forced_pass(inst.model, inst.sample);
  ASSERT_EQ(a.steps.size(), 5u);  // four words + EOS
  for (const auto& s : a.steps) EXPECT_EQ(static_cast<int>(s.alpha.size()), inst.sample.regions.size());
  int grounded = 0;
  for (std::size_t t = 0; t < a.steps.size(); ++t) {
    EXPECT_EQ(a.steps[t].beta.empty(), !inst.sample.grounding[t].has_value());
    grounded += !a.steps[t].beta.empty();
  }
  EXPECT_EQ(grounded, 2);
  const ForwardPass b = teacher_forced_pass(inst.model, inst.sample);
  for (std::size_t t = 0; t < a.steps.size(); ++t) {
    EXPECT_EQ(a.steps[t].word_probs, b.steps[t].word_probs);
    EXPECT_EQ(a.steps[t].alpha, b.steps[t].alpha);
  }
}

TEST(TeacherForcing, OutOfVocabularyTokenThrows) {
  TinyInstance inst = make_tiny_instance(3);
  inst.sample.inputs[2] = 999;
  EXPECT_THROW(teacher_forced_pass(inst.model, inst.sample), std::out_of_range);
}

TEST(TeacherForcing, NoGroundableWordsZeroAttnGrd) {
  TinyInstance inst = make_tiny_instance(4);
  for (auto& g : inst.sample.grounding) g.reset();
  const LambdaWeights lw{0.7, 0.9, 0.3};
  const auto full = loss_and_gradient(inst.model, inst.sample, lw);
  EXPECT_EQ(full.loss.attn, 0.0);
  EXPECT_EQ(full.loss.grd, 0.0);
  const auto only_cls = loss_and_gradient(inst.model, inst.sample, {0, 0, 0.3});
  ASSERT_EQ(full.grads.size(), only_cls.grads.size());
  for (std::size_t i = 0; i < full.grads.size(); ++i) EXPECT_EQ(full.grads[i], only_cls.grads[i]);
}

TEST(TeacherForcing, FrameRestrictionSwitchChangesOnlySupervisedLosses) {
  TinyInstance inst = make_tiny_instance(5);
  const auto on = evaluate_loss(inst.model, inst.sample, {1, 1, 1});
  inst.model.config.frame_restricted = false;
  const auto off = evaluate_loss(inst.model, inst.sample, {1, 1, 1});
  EXPECT_EQ(on.sent, off.sent);
  EXPECT_GT(on.attn, 0.0);
  EXPECT_GT(off.attn, 0.0);
}

TEST(SentenceLoss, Examples) {
  std::vector<DecodeStep> steps(3);
  for (auto& s : steps) s.word_probs.assign(10, 0.1);
  const std::vector<int> targets = {4, 5, Vocabulary::kPad};
  EXPECT_NEAR(sentence_loss(steps, targets), std::log(10.0), 1e-12);
  EXPECT_NEAR(sentence_loss(steps, targets, false), 2 * std::log(10.0), 1e-12);
  for (auto& s : steps) {
    s.word_probs.assign(10, 0.0);
  }
  steps[0].word_probs[4] = 1;
  steps[1].word_probs[5] = 1;
  EXPECT_NEAR(sentence_loss(steps, targets), 0.0, 1e-15);
}

TEST(Generate, RiggedTokenRepeatsUntilMaxLen) {
  TinyInstance inst = make_tiny_instance(6);
  auto& m = inst.model;
  m.w_out = Matrix(m.w_out.rows, m.w_out.cols);
  m.b_out = Matrix(m.b_out.rows, 1);
  m.b_out.data[7] = 50;
  const Generation g = generate(m, inst.sample, {DecodeMode::kGreedy, 3, 6});
  EXPECT_EQ(g.tokens, std::vector<int>(6, 7));
  EXPECT_EQ(g.steps.size(), 6u);
  for (const auto& s : g.steps) EXPECT_NEAR(std::accumulate(s.alpha.begin(), s.alpha.end(), 0.0), 1.0, 1e-12);
  const Generation b = generate(m, inst.sample, {DecodeMode::kBeam, 3, 6});
  EXPECT_EQ(b.tokens, g.tokens);
}

TEST(Generate, ForcedEosGivesEmptyCaption) {
  TinyInstance inst = make_tiny_instance(6);
  auto& m = inst.model;
  m.w_out = Matrix(m.w_out.rows, m.w_out.cols);
  m.b_out = Matrix(m.b_out.rows, 1);
  m.b_out.data[Vocabulary::kEos] = 50;
  EXPECT_TRUE(generate(m, inst.sample, {}).tokens.empty());
  EXPECT_TRUE(generate(m, inst.sample, {DecodeMode::kBeam, 2, 5}).tokens.empty());
}

TEST(Generate, BeamOneEqualsGreedy) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    TinyInstance inst = make_tiny_instance(100 + seed);
    Rng rng(seed);
    for (double& x : inst.model.w_out.data) x += 2.0 * normal(rng);
    const auto g = generate(inst.model, inst.sample, {DecodeMode::kGreedy, 1, 8});
    const auto b = generate(inst.model, inst.sample, {DecodeMode::kBeam, 1, 8});
    EXPECT_EQ(g.tokens, b.tokens) << seed;
    EXPECT_NEAR(g.log_prob, b.log_prob, 1e-12) << seed;
  }
}

TEST(Generate, BadOptionsThrow) {
  const TinyInstance inst = make_tiny_instance(1);
  EXPECT_THROW(generate(inst.model, inst.sample, {DecodeMode::kGreedy, 1, 0}), std::invalid_argument);
  EXPECT_THROW(generate(inst.model, inst.sample, {DecodeMode::kBeam, 0, 5}), std::invalid_argument);
}

TEST(Model, ParameterNamesUniqueAndConfigRoundTrip) {
  TinyInstance inst = make_tiny_instance(1);
  std::set<std::string> names;
  for (const auto& p : inst.model.parameters()) EXPECT_TRUE(names.insert(p.name).second) << p.name;
  const ModelConfig c = ModelConfig::from_json(inst.model.config.to_json());
  EXPECT_EQ(c.to_json(), inst.model.config.to_json());
  EXPECT_THROW(ModelConfig::from_json({{"hiden", 3}}), ConfigError);
}
