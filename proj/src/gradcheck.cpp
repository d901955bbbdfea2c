#include "gvd/gradcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <stdexcept>

namespace gvd {

TinyInstance make_tiny_instance(std::uint64_t seed, bool self_attention) {
  Rng rng(mix_seed(seed, 0x7171));
  ModelConfig c;
  c.feature_dim = 8;
  c.num_classes = 5;
  c.vocab_size = Vocabulary::kNumSpecial + 6;  // a man dog rides bike ball
  c.embed_dim = 8;
  c.hidden = 16;
  c.loc_dim = 4;
  c.temporal_dim = 6;
  c.heads = 2;
  c.layers = 2;
  c.ff_dim = 16;
  c.self_attention = self_attention;
  c.dropout = 0;
  c.encoder_dropout = 0;
  TinyInstance inst{Model::init(c, rng), {}};
  // Move every parameter off zero so that no path is trivially inactive.
  for (auto& p : inst.model.parameters()) {
    if (p.group == ParamGroup::kClassifier && p.name == "classifier.weights") {
      fill_normal(*p.value, rng, 0.5);
    } else if (p.value->cols == 1) {
      const bool gain = p.name.find("gain") != std::string::npos;
      for (double& x : p.value->data) x = (gain ? 1.0 : 0.0) + 0.2 * (2 * uniform01(rng) - 1);
    }
  }

  const int frames = 2, per_frame = 3;
  std::vector<Region> regions;
  for (int f = 0; f < frames; ++f) {
    for (int i = 0; i < per_frame; ++i) {
      Region r;
      const double x = 10 + 60 * i + 5 * uniform01(rng), y = 10 + 10 * uniform01(rng);
      r.box = {x, y, x + 40 + 10 * uniform01(rng), y + 50 + 10 * uniform01(rng)};
      r.frame_index = f;
      r.confidence = 0.5 + 0.5 * uniform01(rng);
      r.feature.resize(c.feature_dim);
      for (double& v : r.feature) v = normal(rng);
      regions.push_back(std::move(r));
    }
  }
  RegionSet set = RegionSet::from_regions(frames, c.feature_dim, 200, 100, regions);

  // tokens: a(4) man(5) rides(7) bike(8); man -> class 0 on frame 0, bike -> class 3 on frame 1
  EncodedCaption cap;
  cap.tokens = {4, 5, 7, 8};
  cap.groundable = {false, true, false, true};
  cap.targets.resize(4);
  BoundingBox near = set.box(4);
  near.x2 += 2;
  cap.targets[1] = GroundTarget{0, 0, 0, {set.box(1)}};
  cap.targets[3] = GroundTarget{3, 1, 1, {near, set.box(5)}};

  Matrix tf(c.temporal_dim, 3);
  for (double& v : tf.data) v = normal(rng);
  inst.sample = make_sample("tiny_0", cap, std::move(set), std::move(tf), {2, 1, 5, 12, 20});
  return inst;
}

namespace {

struct NumericGrads {
  // [component][param] -> matrix; components: sent, attn, cls, grd
  std::vector<Matrix> comp[4];
};

NumericGrads numeric_components(Model& model, const Sample& sample, double h, std::size_t* count) {
  NumericGrads out;
  auto params = model.parameters();
  for (auto& p : params)
    for (auto& c : out.comp) c.emplace_back(p.value->rows, p.value->cols, 0.0);
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Matrix& w = *params[pi].value;
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double orig = w.data[k];
      w.data[k] = orig + h;
      const LossComponents plus = teacher_forced_pass(model, sample).components;
      w.data[k] = orig - h;
      const LossComponents minus = teacher_forced_pass(model, sample).components;
      w.data[k] = orig;
      out.comp[0][pi].data[k] = (plus.sent - minus.sent) / (2 * h);
      out.comp[1][pi].data[k] = (plus.attn - minus.attn) / (2 * h);
      out.comp[2][pi].data[k] = (plus.cls - minus.cls) / (2 * h);
      out.comp[3][pi].data[k] = (plus.grd - minus.grd) / (2 * h);
      ++*count;
    }
  }
  return out;
}

PresetCheck check_preset(const LambdaPreset& preset, Model& model, const Sample& sample,
                         const NumericGrads& num) {
  const SampleGradient an = loss_and_gradient(model, sample, preset.weights);
  const auto params = model.parameters();
  const LambdaWeights& l = preset.weights;
  struct Acc {
    double diff = 0, a = 0, n = 0;
    bool used = false;
  };
  std::vector<Acc> acc(kNumParamGroups);
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    const int g = static_cast<int>(params[pi].group);
    acc[g].used = true;
    for (std::size_t k = 0; k < params[pi].value->size(); ++k) {
      const double a = an.grads[pi].data[k];
      const double n = num.comp[0][pi].data[k] + l.alpha * num.comp[1][pi].data[k] +
                       l.cls * num.comp[2][pi].data[k] + l.beta * num.comp[3][pi].data[k];
      if (!std::isfinite(a) || !std::isfinite(n))
        throw std::runtime_error("non-finite gradient in parameter group " +
                                 std::string(group_name(params[pi].group)) + " (" +
                                 params[pi].name + ")");
      acc[g].diff = std::max(acc[g].diff, std::abs(a - n));
      acc[g].a = std::max(acc[g].a, std::abs(a));
      acc[g].n = std::max(acc[g].n, std::abs(n));
    }
  }
  PresetCheck pc;
  pc.preset = std::string(preset.name);
  for (int g = 0; g < kNumParamGroups; ++g) {
    if (!acc[g].used) continue;
    GroupError e;
    e.group = static_cast<ParamGroup>(g);
    e.max_abs_diff = acc[g].diff;
    e.scale = std::max({acc[g].a, acc[g].n, 1e-6});
    e.rel = e.max_abs_diff / e.scale;
    pc.max_rel = std::max(pc.max_rel, e.rel);
    pc.groups.push_back(e);
  }
  return pc;
}

}  // namespace

GradcheckResult finite_diff_check(const GradcheckOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  std::vector<const LambdaPreset*> presets;
  if (options.presets.empty()) {
    for (const auto& p : lambda_presets()) presets.push_back(&p);
  } else {
    for (const auto& name : options.presets) presets.push_back(&find_preset(name));
  }
  GradcheckResult res;
  for (bool self_attention : {true, false}) {
    bool needed = false;
    for (const auto* p : presets) needed = needed || p->self_attention == self_attention;
    if (!needed) continue;
    TinyInstance inst = make_tiny_instance(options.seed, self_attention);
    const NumericGrads num = numeric_components(inst.model, inst.sample, options.step, &res.parameters);
    for (const auto* p : presets) {
      if (p->self_attention != self_attention) continue;
      res.presets.push_back(check_preset(*p, inst.model, inst.sample, num));
    }
  }
  // Report in preset-table order.
  std::vector<PresetCheck> ordered;
  for (const auto* p : presets)
    for (auto& pc : res.presets)
      if (pc.preset == p->name) ordered.push_back(pc);
  res.presets = std::move(ordered);
  for (const auto& pc : res.presets) res.max_rel = std::max(res.max_rel, pc.max_rel);
  res.passed = res.max_rel < options.threshold;
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return res;
}

}  // namespace gvd
