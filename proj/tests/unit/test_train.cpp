#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "gvd/errors.hpp"
#include "gvd/gradcheck.hpp"
#include "gvd/kernels.hpp"
#include "gvd/train.hpp"
#include "synth_fixture.hpp"

using namespace gvd;
namespace fs = std::filesystem;

namespace {

const oracle::SynthData& shared_data() {
  static const oracle::SynthData d =
      oracle::make_synth_data(oracle::scratch_dir("train_data"), oracle::small_spec());
  return d;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST(Schedule, StepwiseDecay) {
  TrainConfig c;
  c.lr = 1e-3;
  EXPECT_EQ(c.lr_at(0), 1e-3);
  EXPECT_EQ(c.lr_at(2), 1e-3);
  EXPECT_NEAR(c.lr_at(3), 8e-4, 1e-18);
  EXPECT_NEAR(c.lr_at(7), 1e-3 * 0.64, 1e-18);
  c.lr_decay_every = 1;
  EXPECT_NEAR(c.lr_at(2), 1e-3 * 0.64, 1e-18);
}

TEST(Adam, TwoStepsByHand) {
  TinyInstance inst = make_tiny_instance(1);
  Model& m = inst.model;
  auto params = m.parameters();
  std::vector<Matrix> grads;
  for (auto& p : params) grads.push_back(Matrix(p.value->rows, p.value->cols, 0.0));
  grads[0].data[0] = 0.3;
  const double w0 = params[0].value->data[0];
  const double other = params[1].value->data[0];
  Adam adam;
  adam.init(m);
  std::vector<double> lrs(params.size(), 0.01);
  adam.step(m, grads, lrs);
  // bias-corrected first step moves by lr * sign(g)
  const double s1 = 0.01 * 0.3 / (0.3 + 1e-8);
  EXPECT_NEAR(params[0].value->data[0], w0 - s1, 1e-15);
  EXPECT_EQ(params[1].value->data[0], other);
  grads[0].data[0] = -0.1;
  adam.step(m, grads, lrs);
  const double mk = 0.9 * 0.1 * 0.3 + 0.1 * -0.1;
  const double vk = 0.999 * 0.001 * 0.09 + 0.001 * 0.01;
  const double s2 = 0.01 * (mk / (1 - 0.81)) / (std::sqrt(vk / (1 - 0.999 * 0.999)) + 1e-8);
  EXPECT_NEAR(params[0].value->data[0], w0 - s1 - s2, 1e-15);
}

TEST(Selection, FirstMaximum) {
  const std::vector<double> c = {0.1, 0.4, 0.2, 0.4};
  EXPECT_EQ(select_best_epoch(c), 1);
  EXPECT_EQ(select_best_epoch(std::vector<double>{0.5}), 0);
}

TEST(Config, JsonRules) {
  ::unsetenv("GVD_SEED");
  EXPECT_THROW(TrainConfig::from_json({{"learning_rate", 1}}), ConfigError);
  EXPECT_THROW(TrainConfig::from_json({{"model", {{"hiden", 3}}}}), ConfigError);
  EXPECT_THROW(TrainConfig::from_json({{"preset", "nope"}}), ConfigError);
  EXPECT_THROW(TrainConfig::from_json(nlohmann::json::array()), ConfigError);
  EXPECT_THROW(TrainConfig::from_json({{"base", "huge"}}), ConfigError);

  const TrainConfig p = TrainConfig::from_json({{"base", "full"}, {"preset", "sup-grd"}});
  EXPECT_EQ(p.model.feature_dim, 2048);
  EXPECT_EQ(p.model.hidden, 1024);
  EXPECT_EQ(p.batch_size, 240);
  EXPECT_EQ(p.lr, 5e-4);
  EXPECT_EQ(p.lambda.beta, 0.5);

  const TrainConfig n = TrainConfig::from_json({{"preset", "unsup-noselfattn"}});
  EXPECT_FALSE(n.model.self_attention);

  const TrainConfig r = TrainConfig::from_json(n.to_json());
  EXPECT_EQ(r.to_json(), n.to_json());

  ::setenv("GVD_SEED", "99", 1);
  EXPECT_EQ(TrainConfig::from_json({{"seed", 4}}).seed, 99u);
  EXPECT_EQ(TrainConfig::from_json({{"seed", 4}}, false).seed, 4u);
  ::setenv("GVD_SEED", "x9", 1);
  EXPECT_THROW(TrainConfig::from_json({}), ConfigError);
  ::unsetenv("GVD_SEED");
}

TEST(Batch, GradientIsMeanOfSamples) {
  const auto& d = shared_data();
  TrainConfig c = oracle::small_train_config(d);
  ModelConfig mc = c.model;
  mc.vocab_size = d.vocab.size();
  mc.num_classes = d.classes.size();
  Rng rng(5);
  const Model m = Model::init(mc, rng);
  const std::vector<int> two = {3, 1};
  const auto both = batch_gradient(m, d.train, two, c.lambda, false, 1, 0);
  const auto a = batch_gradient(m, d.train, std::vector<int>{3}, c.lambda, false, 1, 0);
  const auto b = batch_gradient(m, d.train, std::vector<int>{1}, c.lambda, false, 1, 0);
  EXPECT_NEAR(both.loss.total, 0.5 * (a.loss.total + b.loss.total), 1e-12);
  for (std::size_t i = 0; i < both.grads.size(); ++i)
    for (std::size_t k = 0; k < both.grads[i].data.size(); ++k)
      ASSERT_NEAR(both.grads[i].data[k], 0.5 * (a.grads[i].data[k] + b.grads[i].data[k]), 1e-12);
}

TEST(Training, DeterministicLogsAndCheckpoints) {
  const auto& d = shared_data();
  TrainConfig c = oracle::small_train_config(d);
  c.apply_preset("sup-attn-grd-cls");
  const fs::path root = oracle::scratch_dir("train_det");
  std::string logs[2];
  for (int run = 0; run < 2; ++run) {
    c.output_dir = (root / ("run" + std::to_string(run))).string();
    std::ostringstream log;
    const TrainResult r = train(c, d.train, &d.val, d.vocab, d.classes, &log);
    logs[run] = log.str();
    ASSERT_EQ(r.epochs.size(), 2u);
    EXPECT_GE(r.selected_epoch, 0);
  }
  EXPECT_EQ(logs[0], logs[1]);
  int files = 0;
  for (const auto& e : fs::recursive_directory_iterator(root / "run0" / "epoch_001")) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), root / "run0");
    EXPECT_EQ(slurp(e.path()), slurp(root / "run1" / rel)) << rel;
    ++files;
  }
  EXPECT_GT(files, 10);
  EXPECT_TRUE(fs::exists(root / "run0" / "selected.json"));

  c.seed = 2;
  std::ostringstream other;
  train(c, d.train, &d.val, d.vocab, d.classes, &other);
  EXPECT_NE(other.str(), logs[0]);
  fs::remove_all(root);
}

TEST(Training, ThreadCountDoesNotChangeResult) {
  const auto& d = shared_data();
  TrainConfig c = oracle::small_train_config(d);
  c.epochs = 1;
  std::ostringstream a, b;
  c.threads = 1;
  train(c, d.train, nullptr, d.vocab, d.classes, &a);
  c.threads = 3;
  train(c, d.train, nullptr, d.vocab, d.classes, &b);
  kernels::set_num_threads(1);
  EXPECT_EQ(a.str(), b.str());
}

TEST(Checkpoint, RoundTripPreservesEvaluation) {
  const auto& d = shared_data();
  TrainConfig c = oracle::small_train_config(d);
  c.epochs = 1;
  TrainResult r = train(c, d.train, nullptr, d.vocab, d.classes, nullptr);
  const fs::path dir = oracle::scratch_dir("ckpt");
  save_checkpoint(dir, r.model, d.vocab, d.classes, c.preset, c.lambda, 0);
  Checkpoint ck = load_checkpoint(dir);
  EXPECT_EQ(ck.preset, c.preset);
  EXPECT_EQ(ck.epoch, 0);
  EXPECT_EQ(ck.vocab.hash(), d.vocab.hash());
  auto pa = r.model.parameters();
  auto pb = ck.model.parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(pa[i].value->data, pb[i].value->data) << pa[i].name;

  EvalOptions eo;
  eo.lambda = c.lambda;
  const EvalResult ea = evaluate(r.model, d.val, d.vocab, d.classes, eo);
  const EvalResult eb = evaluate(ck.model, d.val, ck.vocab, ck.classes, eo);
  EXPECT_EQ(ea.report.to_json(true).dump(), eb.report.to_json(true).dump());
  EXPECT_EQ(ea.loss->total, eb.loss->total);

  // tampered vocabulary hash
  auto manifest = load_json(dir / "manifest.json");
  manifest["vocab_hash"] = "0000";
  save_json(dir / "manifest.json", manifest);
  EXPECT_THROW(load_checkpoint(dir), DataError);
  EXPECT_THROW(load_checkpoint(dir / "missing"), DataError);
  fs::remove_all(dir);
}

TEST(Training, NonFiniteLossAborts) {
  const auto& d = shared_data();
  TrainConfig c = oracle::small_train_config(d);
  c.epochs = 1;
  ModelConfig mc = c.model;
  mc.vocab_size = d.vocab.size();
  mc.num_classes = d.classes.size();
  Rng rng(1);
  Model m = Model::init(mc, rng);
  m.b_out.data[0] = std::nan("");
  const fs::path dir = oracle::scratch_dir("nonfinite");
  c.output_dir = dir.string();
  EXPECT_THROW(train(c, d.train, nullptr, d.vocab, d.classes, nullptr, &m), TrainingError);
  EXPECT_TRUE(fs::exists(dir / "nonfinite_batch.json"));
  fs::remove_all(dir);
}

TEST(Evaluate, ReferenceObjectsFirstInstancePerClass) {
  const auto& d = shared_data();
  for (const auto& s : d.val.samples) {
    const auto refs = reference_objects(s);
    std::set<int> seen;
    for (const auto& r : refs) EXPECT_TRUE(seen.insert(r.class_id).second);
  }
}

TEST(Training, ClassifierTransferFromFiles) {
  const auto& d = shared_data();
  const fs::path dir = oracle::scratch_dir("transfer");
  std::ofstream(dir / "emb.txt") << "man 1 0\nguy 1 0.1\ndog 0 1\npuppy 0.1 1\ncar 0.5 0.6\n";
  nlohmann::json src;
  for (const char* name : {"guy", "puppy"})
    src["classes"].push_back({{"name", name}, {"weight", std::vector<double>(12, 0.25)}, {"bias", 0.5}});
  save_json(dir / "src.json", src);

  TrainConfig c = oracle::small_train_config(d);
  c.epochs = 1;
  c.embeddings = (dir / "emb.txt").string();
  EXPECT_THROW(c.validate(), ConfigError);
  c.source_classifiers = (dir / "src.json").string();
  std::ostringstream log;
  train(c, d.train, nullptr, d.vocab, d.classes, &log);
  const auto first = nlohmann::json::parse(log.str().substr(0, log.str().find('\n')));
  EXPECT_EQ(first.at("type"), "transfer");
  EXPECT_EQ(first.at("transferred"), 3);  // "ball" has no embedding
  EXPECT_EQ(TrainConfig::from_json(c.to_json(), false).source_classifiers, c.source_classifiers);
  fs::remove_all(dir);
}
