#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "fd.hpp"
#include "gvd/decoder.hpp"
#include "gvd/errors.hpp"
#include "gvd/grounding.hpp"

using namespace gvd;

namespace {

Model small_model(bool self_attention = true, std::uint64_t seed = 1) {
  ModelConfig c;
  c.feature_dim = 4;
  c.num_classes = 3;
  c.vocab_size = 6;
  c.embed_dim = 4;
  c.hidden = 8;
  c.loc_dim = 5;
  c.temporal_dim = 3;
  c.heads = 2;
  c.layers = 2;
  c.ff_dim = 8;
  c.self_attention = self_attention;
  Rng rng(seed);
  Model m = Model::init(c, rng);
  for (auto& p : m.parameters())
    for (double& x : p.value->data) x += 0.3 * normal(rng);
  return m;
}

Matrix rnd(int r, int c, Rng& rng, double s = 1.0) {
  Matrix m(r, c);
  fill_normal(m, rng, s);
  return m;
}

}  // namespace

TEST(Similarity, ZeroInputsUniform) {
  ClassifierBank bank{Matrix(3, 4), Matrix(4, 1)};
  const Matrix ms = region_class_similarity(Matrix(3, 5), bank);
  for (double v : ms.data) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(Similarity, HandScalarSoftmax) {
  ClassifierBank bank{Matrix::from_rows({{std::log(2.0), 0.0}}), Matrix(2, 1)};
  const Matrix ms = region_class_similarity(Matrix::from_rows({{1.0}}), bank);
  EXPECT_NEAR(ms(0, 0), 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(ms(1, 0), 1.0 / 3.0, 1e-12);
}

TEST(Similarity, NonFiniteInputThrows) {
  ClassifierBank bank{Matrix(1, 2), Matrix(2, 1)};
  EXPECT_THROW(region_class_similarity(Matrix::from_rows({{NAN}}), bank), std::invalid_argument);
}

TEST(Similarity, DropoutOnlyInTrainMode) {
  Rng rng(3);
  ClassifierBank bank{rnd(4, 3, rng), rnd(3, 1, rng)};
  const Matrix r = rnd(4, 6, rng);
  Rng d1(5);
  EXPECT_EQ(region_class_similarity(r, bank, false, &d1), region_class_similarity(r, bank));
  Rng d2(5);
  EXPECT_NE(region_class_similarity(r, bank, true, &d2), region_class_similarity(r, bank));
}

TEST(GroundingAwareEncoding, ShapeZeroAndHandValue) {
  Model m = small_model(false);
  m.encoder.w_g = Matrix(8, 4 + 3 + 5);
  m.encoder.b_g = Matrix(8, 1);
  Rng rng(1);
  const Matrix out = grounding_aware_encoding(rnd(4, 7, rng), rnd(3, 7, rng), rnd(5, 7, rng), m.encoder);
  EXPECT_EQ(out.rows, 8);
  EXPECT_EQ(out.cols, 7);
  for (double v : out.data) EXPECT_EQ(v, 0.0);

  // 1x1 output: concat (R | M_s | location embedding) dotted with a hand-set row.
  GroundingEncoderParams p;
  p.w_loc = Matrix(5, 5);
  for (int i = 0; i < 5; ++i) p.w_loc(i, i) = 1.0;
  p.b_loc = Matrix(5, 1);
  p.w_g = Matrix(1, 12);
  for (int i = 0; i < 12; ++i) p.w_g(0, i) = 0.1 * (i + 1);
  p.b_g = Matrix(1, 1, 0.5);
  p.use_self_attention = false;
  const Matrix r = Matrix::column({1, 2, 3, 4});
  const Matrix ms = Matrix::column({0.2, 0.3, 0.5});
  const Matrix loc = Matrix::column({0.1, 0.2, 0.3, 0.4, 0.5});
  const std::vector<double> concat = {1, 2, 3, 4, 0.2, 0.3, 0.5, 0.1, 0.2, 0.3, 0.4, 0.5};
  double expect = 0.5;
  for (int i = 0; i < 12; ++i) expect += 0.1 * (i + 1) * concat[i];
  EXPECT_NEAR(grounding_aware_encoding(r, ms, loc, p)(0, 0), expect, 1e-12);
}

TEST(RegionContext, ShapeAndPermutationEquivariance) {
  const Model m = small_model(true);
  Rng rng(8);
  const Matrix x = rnd(8, 5, rng);
  const Matrix y = encode_region_context(x, m.encoder);
  ASSERT_TRUE(y.same_shape(x));
  const std::vector<int> perm = {3, 0, 4, 1, 2};
  Matrix xp(8, 5);
  for (int j = 0; j < 5; ++j)
    for (int i = 0; i < 8; ++i) xp(i, j) = x(i, perm[j]);
  const Matrix yp = encode_region_context(xp, m.encoder);
  for (int j = 0; j < 5; ++j)
    for (int i = 0; i < 8; ++i) EXPECT_NEAR(yp(i, j), y(i, perm[j]), 1e-12);
}

TEST(RegionContext, SingleRegionAttendsToItself) {
  const Model m = small_model(true);
  Rng rng(2);
  const Matrix x = rnd(8, 1, rng);
  ad::Tape t(false);
  const Matrix sa = grounding::self_attention(t.input(x), m.encoder.layers[0], 2).value();
  // softmax over one key is 1, so the sublayer is W_o (W_v x + b_v) + b_o
  const auto& l = m.encoder.layers[0];
  for (int i = 0; i < 8; ++i) {
    double v = l.bo.data[i];
    for (int k = 0; k < 8; ++k) {
      double vk = l.bv.data[k];
      for (int j = 0; j < 8; ++j) vk += l.wv(k, j) * x.data[j];
      v += l.wo(i, k) * vk;
    }
    EXPECT_NEAR(sa.data[i], v, 1e-12);
  }
}

TEST(RegionContext, IndivisibleHeadsIsConfigError) {
  EXPECT_THROW(check_encoder_shape(10, 4), ConfigError);
  EXPECT_NO_THROW(check_encoder_shape(12, 4));
  ModelConfig c;
  c.vocab_size = 5;
  c.hidden = 30;
  c.heads = 4;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(ConditionedSimilarity, UniformAlphaAndHandValue) {
  Rng rng(4);
  ClassifierBank bank{rnd(4, 3, rng), rnd(3, 1, rng)};
  const Matrix r = rnd(4, 5, rng);
  const std::vector<double> uni(5, 0.2), zero(5, 0.0);
  const auto a = conditioned_similarity(r, bank, uni);
  const auto b = conditioned_similarity(r, bank, zero);
  for (std::size_t i = 0; i < a.probs.size(); ++i) EXPECT_NEAR(a.probs.data[i], b.probs.data[i], 1e-12);

  ClassifierBank one{Matrix(1, 1), Matrix(1, 1)};
  const std::vector<double> alpha = {std::log(3.0), 0.0};
  const auto c = conditioned_similarity(Matrix(1, 2), one, alpha);
  EXPECT_NEAR(c.probs(0, 0), 0.75, 1e-12);
  EXPECT_NEAR(c.probs(0, 1), 0.25, 1e-12);
  EXPECT_THROW(conditioned_similarity(Matrix(1, 2), one, std::vector<double>{1.0}), std::invalid_argument);
}

TEST(ConditionedSimilarity, ShiftInvariantLoss) {
  Rng rng(6);
  ClassifierBank bank{rnd(4, 3, rng), rnd(3, 1, rng)};
  const Matrix r = rnd(4, 5, rng);
  std::vector<double> alpha = {0.1, 0.2, 0.3, 0.15, 0.25};
  std::vector<double> shifted = alpha;
  for (double& v : shifted) v += 2.5;
  const std::vector<std::uint8_t> gamma = {0, 1, 0, 1, 0};
  EXPECT_NEAR(grounding_loss(conditioned_similarity(r, bank, alpha), 1, gamma).value,
              grounding_loss(conditioned_similarity(r, bank, shifted), 1, gamma).value, 1e-12);
}

TEST(ClassificationLoss, Examples) {
  std::vector<Region> regs(2);
  regs[0].box = {0, 0, 1, 1};
  regs[1].box = {2, 2, 3, 3};
  for (auto& r : regs) r.feature = {0.0};
  const RegionSet rs = RegionSet::from_regions(1, 1, 5, 5, regs);
  const GroundTruthBox g0[] = {{{0, 0, 1, 1}, 0, 0}};
  const auto one = match_positives(rs, g0);
  EXPECT_NEAR(classification_loss(Matrix::from_rows({{1, 0.5}, {0, 0.5}}), one).value, 0.0, 1e-15);
  EXPECT_NEAR(classification_loss(Matrix::from_rows({{0.25, 0.5}, {0.75, 0.5}}), one).value, std::log(4.0), 1e-12);
  const GroundTruthBox g2[] = {{{0, 0, 1, 1}, 0, 0}, {{2, 2, 3, 3}, 1, 0}};
  const auto two = match_positives(rs, g2);
  EXPECT_NEAR(classification_loss(Matrix::from_rows({{0.5, 0.75}, {0.5, 0.25}}), two).value,
              (std::log(2.0) + std::log(4.0)) / 2, 1e-12);
  EXPECT_EQ(classification_loss(Matrix(2, 2, 0.5), match_positives(rs, {})).value, 0.0);
  const auto clamped = classification_loss(Matrix::from_rows({{0, 1}, {1, 0}}), one);
  EXPECT_TRUE(clamped.clamped);
  EXPECT_TRUE(std::isfinite(clamped.value));
}

TEST(GroundingLoss, Examples) {
  ConditionedSimilarity cs{Matrix::from_rows({{0.5, 0.3, 0.2}})};
  const std::vector<std::uint8_t> g = {1, 0, 1};
  EXPECT_NEAR(grounding_loss(cs, 0, g).value, -(std::log(0.5) + std::log(0.2)), 1e-12);
  ConditionedSimilarity certain{Matrix::from_rows({{1, 0, 0}})};
  EXPECT_NEAR(grounding_loss(certain, 0, std::vector<std::uint8_t>{1, 0, 0}).value, 0.0, 1e-15);
  EXPECT_EQ(grounding_loss(cs, 0, std::vector<std::uint8_t>{0, 0, 0}).value, 0.0);
}

TEST(GroundingGradients, ClsAndGrdMatchFiniteDifferences) {
  Rng rng(12);
  ClassifierBank bank{rnd(4, 3, rng), rnd(3, 1, rng)};
  Matrix r = rnd(4, 5, rng);
  Matrix alpha = Matrix::column({0.1, 0.3, 0.2, 0.25, 0.15});
  std::vector<Region> regs(5);
  for (int i = 0; i < 5; ++i) {
    regs[i].box = {double(i), 0, i + 1.0, 1};
    regs[i].feature = {0.0};
  }
  const RegionSet rs = RegionSet::from_regions(1, 1, 10, 10, regs);
  const GroundTruthBox gt[] = {{{1, 0, 2, 1}, 2, 0}, {{3, 0, 4, 1}, 0, 0}};
  const auto match = match_positives(rs, gt);
  const std::vector<std::uint8_t> gamma = {0, 1, 0, 1, 0};

  auto loss = [&](ad::Tape& t) {
    ad::Var logits = grounding::class_logits(t.param(r), bank, Dropout{});
    ad::Var lc = grounding::classification_loss(grounding::similarity(logits), match);
    ad::Var beta = grounding::conditioned_row(logits, t.param(alpha), 1, {});
    ad::Var lg = grounding::grounding_loss(beta, gamma);
    return ad::add(lc, lg);
  };
  ad::Tape tape;
  tape.backward(loss(tape));
  auto value = [&] {
    ad::Tape t(false);
    return loss(t).scalar();
  };
  for (Matrix* p : {&bank.weights, &bank.bias, &r, &alpha}) {
    const Matrix* g = tape.grad_of(*p);
    ASSERT_NE(g, nullptr);
    const Matrix n = oracle::numeric_grad(*p, value);
    double scale = 1e-6;
    for (std::size_t i = 0; i < n.size(); ++i) scale = std::max({scale, std::abs(n.data[i]), std::abs(g->data[i])});
    EXPECT_LT(oracle::max_abs_diff(*g, n) / scale, 1e-4);
  }
}

TEST(Transfer, VerbatimNearestAndFallback) {
  const auto dir = std::filesystem::temp_directory_path() / "gvd_test_transfer";
  std::filesystem::create_directories(dir);
  std::ofstream(dir / "emb.txt") << "dog 1 0\npuppy 0.9 0.1\ncat 0 1\nkitten 0.1 0.8\n";
  std::ofstream(dir / "src.json")
      << R"({"classes":[{"name":"dog","weight":[1,2],"bias":0.5},{"name":"cat","weight":[3,4],"bias":-1}]})";
  const auto emb = load_embedding_table((dir / "emb.txt").string());
  const auto src = load_source_classifiers((dir / "src.json").string());
  const std::vector<std::string> names = {"kitten", "dog", "zebra"};
  Rng rng(1);
  TransferReport rep;
  const ClassifierBank b = init_classifier_transfer(names, 2, &emb, &src, rng, &rep);
  EXPECT_EQ(rep.source_of[0], 1);  // kitten -> cat
  EXPECT_EQ(rep.source_of[1], 0);  // verbatim
  EXPECT_FALSE(rep.source_of[2].has_value());
  EXPECT_EQ(rep.transferred(), 2);
  EXPECT_EQ(b.weights(0, 0), 3);
  EXPECT_EQ(b.bias.data[1], 0.5);

  Rng r1(9), r2(9);
  const auto x = init_classifier_transfer(names, 2, nullptr, nullptr, r1);
  const auto y = init_classifier_transfer(names, 2, nullptr, nullptr, r2);
  EXPECT_EQ(x.weights, y.weights);
}
