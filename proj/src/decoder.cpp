#include "gvd/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "gvd/errors.hpp"

namespace gvd {

// ---- config ----

void ModelConfig::validate() const {
  auto need = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
  };
  need(feature_dim > 0 && num_classes > 0 && vocab_size > Vocabulary::kNumSpecial,
       "model dims must be positive and the vocabulary non-trivial");
  need(embed_dim > 0 && hidden > 0 && loc_dim > 0 && temporal_dim > 0 && ff_dim > 0,
       "model dims must be positive");
  need(hidden % 2 == 0, "hidden size must be even (Bi-GRU halves)");
  need(layers >= 0, "layer count must be non-negative");
  need(dropout >= 0 && dropout < 1 && encoder_dropout >= 0 && encoder_dropout < 1 &&
           lm_dropout >= 0 && lm_dropout < 1,
       "dropout rates must be in [0, 1)");
  if (self_attention) check_encoder_shape(hidden, heads);
}

nlohmann::json ModelConfig::to_json() const {
  return {{"feature_dim", feature_dim},   {"num_classes", num_classes},
          {"vocab_size", vocab_size},     {"embed_dim", embed_dim},
          {"hidden", hidden},             {"loc_dim", loc_dim},
          {"temporal_dim", temporal_dim}, {"heads", heads},
          {"layers", layers},             {"ff_dim", ff_dim},
          {"self_attention", self_attention}, {"activation", activation},
          {"dropout", dropout},           {"encoder_dropout", encoder_dropout},
          {"lm_dropout", lm_dropout},     {"per_token_loss", per_token_loss},
          {"frame_restricted", frame_restricted}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  if (!j.is_object()) throw ConfigError("model config must be a JSON object");
  const nlohmann::json known = c.to_json();
  for (const auto& [k, v] : j.items())
    if (!known.contains(k)) throw ConfigError("unknown model config key '" + k + "'");
  c.feature_dim = j.value("feature_dim", c.feature_dim);
  c.num_classes = j.value("num_classes", c.num_classes);
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.hidden = j.value("hidden", c.hidden);
  c.loc_dim = j.value("loc_dim", c.loc_dim);
  c.temporal_dim = j.value("temporal_dim", c.temporal_dim);
  c.heads = j.value("heads", c.heads);
  c.layers = j.value("layers", c.layers);
  c.ff_dim = j.value("ff_dim", c.ff_dim);
  c.self_attention = j.value("self_attention", c.self_attention);
  c.activation = j.value("activation", c.activation);
  c.dropout = j.value("dropout", c.dropout);
  c.encoder_dropout = j.value("encoder_dropout", c.encoder_dropout);
  c.lm_dropout = j.value("lm_dropout", c.lm_dropout);
  c.per_token_loss = j.value("per_token_loss", c.per_token_loss);
  c.frame_restricted = j.value("frame_restricted", c.frame_restricted);
  return c;
}

// ---- lambda presets ----

namespace {

constexpr LambdaPreset kPresets[] = {
    {"unsup-noselfattn", {0.0, 0.0, 0.0}, false},
    {"unsup", {0.0, 0.0, 0.0}, true},
    {"sup-attn", {0.05, 0.0, 0.0}, true},
    {"sup-grd", {0.0, 0.5, 0.0}, true},
    {"sup-cls", {0.0, 0.0, 0.1}, true},
    {"sup-attn-grd", {0.5, 0.5, 0.0}, true},
    {"sup-attn-cls", {0.05, 0.0, 0.1}, true},
    {"sup-grd-cls", {0.0, 0.05, 0.1}, true},
    {"sup-attn-grd-cls", {0.1, 0.1, 0.1}, true},
};

void check_lambda(const LambdaWeights& l) {
  if (!(l.alpha >= 0) || !(l.beta >= 0) || !(l.cls >= 0))
    throw ConfigError("loss weights must be non-negative");
}

}  // namespace

std::span<const LambdaPreset> lambda_presets() { return kPresets; }

const LambdaPreset& find_preset(std::string_view name) {
  for (const auto& p : kPresets)
    if (p.name == name) return p;
  std::string known;
  for (const auto& p : kPresets) known += (known.empty() ? "" : ", ") + std::string(p.name);
  throw ConfigError("unknown preset '" + std::string(name) + "' (known: " + known + ")");
}

LossBreakdown joint_loss(const LossComponents& c, const LambdaWeights& l) {
  check_lambda(l);
  LossBreakdown b{c.sent, c.attn, c.cls, c.grd, 0.0};
  b.total = c.sent + l.alpha * c.attn;
  b.total = b.total + l.cls * c.cls;
  b.total = b.total + l.beta * c.grd;
  return b;
}

ad::Var joint_loss(ad::Var sent, ad::Var attn, ad::Var cls, ad::Var grd, const LambdaWeights& l) {
  check_lambda(l);
  ad::Var total = ad::add(sent, ad::scale(attn, l.alpha));
  total = ad::add(total, ad::scale(cls, l.cls));
  return ad::add(total, ad::scale(grd, l.beta));
}

// ---- parameters ----

std::string_view group_name(ParamGroup g) {
  switch (g) {
    case ParamGroup::kClassifier: return "classifier";
    case ParamGroup::kGrounding: return "grounding";
    case ParamGroup::kAttention: return "attention";
    case ParamGroup::kTemporal: return "temporal";
    case ParamGroup::kEmbedding: return "embedding";
    case ParamGroup::kAttentionLstm: return "attention_lstm";
    case ParamGroup::kLanguageLstm: return "language_lstm";
    case ParamGroup::kOutput: return "output";
  }
  return "?";
}

namespace {

template <class M, class F>
void visit_params(M& m, F&& f) {
  using G = ParamGroup;
  f("classifier.weights", G::kClassifier, m.bank.weights);
  f("classifier.bias", G::kClassifier, m.bank.bias);
  f("grounding.w_loc", G::kGrounding, m.encoder.w_loc);
  f("grounding.b_loc", G::kGrounding, m.encoder.b_loc);
  f("grounding.w_g", G::kGrounding, m.encoder.w_g);
  f("grounding.b_g", G::kGrounding, m.encoder.b_g);
  for (std::size_t l = 0; l < m.encoder.layers.size(); ++l) {
    auto& L = m.encoder.layers[l];
    const std::string p = "grounding.layer" + std::to_string(l) + ".";
    f(p + "wq", G::kGrounding, L.wq);
    f(p + "bq", G::kGrounding, L.bq);
    f(p + "wk", G::kGrounding, L.wk);
    f(p + "bk", G::kGrounding, L.bk);
    f(p + "wv", G::kGrounding, L.wv);
    f(p + "bv", G::kGrounding, L.bv);
    f(p + "wo", G::kGrounding, L.wo);
    f(p + "bo", G::kGrounding, L.bo);
    f(p + "ln1_gain", G::kGrounding, L.ln1_gain);
    f(p + "ln1_bias", G::kGrounding, L.ln1_bias);
    f(p + "w1", G::kGrounding, L.w1);
    f(p + "b1", G::kGrounding, L.b1);
    f(p + "w2", G::kGrounding, L.w2);
    f(p + "b2", G::kGrounding, L.b2);
    f(p + "ln2_gain", G::kGrounding, L.ln2_gain);
    f(p + "ln2_bias", G::kGrounding, L.ln2_bias);
  }
  f("attention.w_r", G::kAttention, m.region_attention.w_r);
  f("attention.w_h", G::kAttention, m.region_attention.w_h);
  f("attention.w_alpha", G::kAttention, m.region_attention.w_alpha);
  auto& T = m.temporal;
  f("temporal.fwd.w", G::kTemporal, T.forward.w);
  f("temporal.fwd.u", G::kTemporal, T.forward.u);
  f("temporal.fwd.bw", G::kTemporal, T.forward.bw);
  f("temporal.fwd.bu", G::kTemporal, T.forward.bu);
  f("temporal.bwd.w", G::kTemporal, T.backward.w);
  f("temporal.bwd.u", G::kTemporal, T.backward.u);
  f("temporal.bwd.bw", G::kTemporal, T.backward.bw);
  f("temporal.bwd.bu", G::kTemporal, T.backward.bu);
  f("temporal.w_proj", G::kTemporal, T.w_proj);
  f("temporal.b_proj", G::kTemporal, T.b_proj);
  f("temporal.w_r", G::kTemporal, T.attend.w_r);
  f("temporal.w_h", G::kTemporal, T.attend.w_h);
  f("temporal.w_alpha", G::kTemporal, T.attend.w_alpha);
  f("temporal.w_global", G::kTemporal, T.w_global);
  f("temporal.b_global", G::kTemporal, T.b_global);
  f("embedding", G::kEmbedding, m.embedding);
  f("attention_lstm.w", G::kAttentionLstm, m.attention_lstm.w);
  f("attention_lstm.u", G::kAttentionLstm, m.attention_lstm.u);
  f("attention_lstm.b", G::kAttentionLstm, m.attention_lstm.b);
  f("language_lstm.w", G::kLanguageLstm, m.language_lstm.w);
  f("language_lstm.u", G::kLanguageLstm, m.language_lstm.u);
  f("language_lstm.b", G::kLanguageLstm, m.language_lstm.b);
  f("output.w", G::kOutput, m.w_out);
  f("output.b", G::kOutput, m.b_out);
}

Matrix uniform_init(int rows, int cols, Rng& rng) {
  Matrix m(rows, cols);
  fill_uniform(m, rng, 1.0 / std::sqrt(static_cast<double>(cols)));
  return m;
}

Matrix zeros(int rows) { return Matrix(rows, 1, 0.0); }

}  // namespace

Model Model::init(const ModelConfig& c, Rng& rng) {
  c.validate();
  Model m;
  m.config = c;
  const int d = c.feature_dim, k = c.num_classes, h = c.hidden, half = c.hidden / 2;
  m.bank.weights = Matrix(d, k);
  fill_normal(m.bank.weights, rng, 0.02);
  m.bank.bias = zeros(k);

  auto& e = m.encoder;
  e.w_loc = uniform_init(c.loc_dim, 5, rng);
  e.b_loc = zeros(c.loc_dim);
  e.w_g = uniform_init(h, d + k + c.loc_dim, rng);
  e.b_g = zeros(h);
  e.heads = c.heads;
  e.use_self_attention = c.self_attention;
  e.activation = c.activation;
  e.dropout = c.dropout;
  e.encoder_dropout = c.encoder_dropout;
  if (c.self_attention) {
    for (int l = 0; l < c.layers; ++l) {
      EncoderLayerParams L;
      L.wq = uniform_init(h, h, rng);
      L.bq = zeros(h);
      L.wk = uniform_init(h, h, rng);
      L.bk = zeros(h);
      L.wv = uniform_init(h, h, rng);
      L.bv = zeros(h);
      L.wo = uniform_init(h, h, rng);
      L.bo = zeros(h);
      L.ln1_gain = Matrix(h, 1, 1.0);
      L.ln1_bias = zeros(h);
      L.w1 = uniform_init(c.ff_dim, h, rng);
      L.b1 = zeros(c.ff_dim);
      L.w2 = uniform_init(h, c.ff_dim, rng);
      L.b2 = zeros(h);
      L.ln2_gain = Matrix(h, 1, 1.0);
      L.ln2_bias = zeros(h);
      e.layers.push_back(std::move(L));
    }
  }

  m.region_attention = {uniform_init(h, h, rng), uniform_init(h, h, rng), uniform_init(h, 1, rng)};

  auto gru = [&](GruParams& g) {
    g.w = uniform_init(3 * half, c.temporal_dim, rng);
    g.u = uniform_init(3 * half, half, rng);
    g.bw = zeros(3 * half);
    g.bu = zeros(3 * half);
  };
  gru(m.temporal.forward);
  gru(m.temporal.backward);
  m.temporal.w_proj = uniform_init(h, h, rng);
  m.temporal.b_proj = zeros(h);
  m.temporal.attend = {uniform_init(h, h, rng), uniform_init(h, h, rng), uniform_init(h, 1, rng)};
  m.temporal.w_global = uniform_init(h, c.temporal_dim + 4, rng);
  m.temporal.b_global = zeros(h);

  m.embedding = Matrix(c.vocab_size, c.embed_dim);
  fill_uniform(m.embedding, rng, 0.1);
  m.attention_lstm = {uniform_init(4 * h, 2 * h + c.embed_dim, rng), uniform_init(4 * h, h, rng),
                      zeros(4 * h)};
  m.language_lstm = {uniform_init(4 * h, 3 * h, rng), uniform_init(4 * h, h, rng), zeros(4 * h)};
  m.w_out = uniform_init(c.vocab_size, h, rng);
  m.b_out = zeros(c.vocab_size);
  return m;
}

std::vector<ParamEntry> Model::parameters() {
  std::vector<ParamEntry> out;
  visit_params(*this, [&](const std::string& name, ParamGroup g, Matrix& v) {
    out.push_back({name, g, &v});
  });
  return out;
}

std::vector<const Matrix*> Model::parameter_values() const {
  std::vector<const Matrix*> out;
  visit_params(*this, [&](const std::string&, ParamGroup, const Matrix& v) { out.push_back(&v); });
  return out;
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const Matrix* p : parameter_values()) n += p->size();
  return n;
}

// ---- samples ----

bool WordGrounding::has_positive() const {
  return std::find(gamma.begin(), gamma.end(), 1) != gamma.end();
}

bool WordGrounding::has_positive_any() const {
  return std::find(gamma_any.begin(), gamma_any.end(), 1) != gamma_any.end();
}

Sample make_sample(std::string key, const EncodedCaption& caption, RegionSet regions,
                   Matrix frames, const SegmentMeta& meta) {
  Sample s;
  s.key = std::move(key);
  s.locations = location_features(regions);
  s.frames = std::move(frames);
  s.meta = meta;
  s.inputs = caption.decoder_inputs();
  s.targets = caption.decoder_targets();
  s.grounding.resize(s.targets.size());
  std::vector<std::pair<int, int>> seen;  // (mention, class)
  for (int w = 0; w < caption.length(); ++w) {
    if (!caption.targets[w]) continue;
    const GroundTarget& g = *caption.targets[w];
    if (g.frame < 0 || g.frame >= regions.num_frames())
      throw DataError(s.key + ": box frame " + std::to_string(g.frame) + " outside the " +
                      std::to_string(regions.num_frames()) + " sampled frames");
    std::vector<GroundTruthBox> word_gt;
    for (const auto& b : g.boxes) word_gt.push_back({b, g.class_id, g.frame});
    WordGrounding wg;
    wg.class_id = g.class_id;
    wg.frame = g.frame;
    wg.mention = g.mention;
    wg.boxes = g.boxes;
    wg.gamma = match_positives(regions, word_gt).gamma;
    wg.gamma_any = match_positives(regions, word_gt, 0.5, false).gamma;
    const auto cand = regions.frame_regions(g.frame);
    wg.candidates.assign(cand.begin(), cand.end());
    for (int i : wg.candidates) wg.candidate_gamma.push_back(wg.gamma[i]);
    s.grounding[w] = std::move(wg);
    const std::pair<int, int> mc{g.mention, g.class_id};
    if (std::find(seen.begin(), seen.end(), mc) == seen.end()) {
      seen.push_back(mc);
      s.gt.insert(s.gt.end(), word_gt.begin(), word_gt.end());
    }
  }
  s.match = match_positives(regions, s.gt);
  s.match_any = match_positives(regions, s.gt, 0.5, false);
  s.regions = std::move(regions);
  return s;
}

// ---- forward ----

namespace {

struct Encoded {
  ad::Var logits, sim, enc, proj, tenc, tproj, global;
};

struct DecoderState {
  LstmState att, lang;
};

struct StepOut {
  ad::Var probs, alpha;
};

void check_sample(const Model& m, const Sample& s) {
  const auto& c = m.config;
  if (s.regions.size() < 1) throw DataError(s.key + ": no regions");
  if (s.regions.feature_dim() != c.feature_dim)
    throw DataError(s.key + ": region features have dimension " +
                    std::to_string(s.regions.feature_dim()) + ", model expects " +
                    std::to_string(c.feature_dim));
  if (s.frames.rows != c.temporal_dim || s.frames.cols < 1)
    throw DataError(s.key + ": temporal features have dimension " + std::to_string(s.frames.rows) +
                    ", model expects " + std::to_string(c.temporal_dim));
}

void check_token(const Model& m, int tok) {
  if (tok < 0 || tok >= m.config.vocab_size)
    throw std::out_of_range("token id " + std::to_string(tok) + " outside vocabulary of size " +
                            std::to_string(m.config.vocab_size));
}

Encoded encode_inputs(const Model& m, const Sample& s, ad::Tape& t, const Dropout& drop) {
  check_sample(m, s);
  Encoded e;
  ad::Var r = t.input(s.regions.features());
  e.logits = grounding::class_logits(r, m.bank, drop, m.config.dropout);
  e.sim = grounding::similarity(e.logits);
  ad::Var loc = grounding::location_embedding(t.input(s.locations), m.encoder, drop);
  e.enc = grounding::grounding_aware_encoding(r, e.sim, loc, m.encoder, drop);
  if (m.config.self_attention) e.enc = grounding::encode_region_context(e.enc, m.encoder, drop);
  e.proj = attention::project(e.enc, m.region_attention);
  ad::Var frames = t.input(s.frames);
  e.tenc = attention::bigru_encode(frames, m.temporal);
  e.tproj = attention::project(e.tenc, m.temporal.attend);
  e.global = attention::global_feature(frames, s.meta, m.temporal);
  return e;
}

DecoderState initial_state(const Model& m, ad::Tape& t) {
  const Matrix z(m.config.hidden, 1, 0.0);
  return {{t.constant(z), t.constant(z)}, {t.constant(z), t.constant(z)}};
}

StepOut decode_step(const Model& m, const Encoded& e, DecoderState& st, int token,
                    const Dropout& drop) {
  ad::Tape& t = *e.enc.tape;
  ad::Var y = ad::embed_row(t.param(m.embedding), token);
  const ad::Var att_in[] = {st.lang.h, e.global, y};
  st.att = lstm_step(m.attention_lstm, ad::concat_rows(att_in), st.att);
  ad::Var alpha = attention::weights(e.proj, st.att.h, m.region_attention);
  ad::Var region_ctx = ad::matmul(e.enc, alpha);
  ad::Var frame_w = attention::weights(e.tproj, st.att.h, m.temporal.attend);
  ad::Var frame_ctx = ad::matmul(e.tenc, frame_w);
  const ad::Var lang_in[] = {st.att.h, frame_ctx, region_ctx};
  st.lang = lstm_step(m.language_lstm, ad::concat_rows(lang_in), st.lang);
  ad::Var h = drop.apply(st.lang.h, m.config.lm_dropout);
  return {ad::softmax_cols(linear(h, m.w_out, m.b_out)), alpha};
}

ad::Var mean_of(ad::Tape& t, const std::vector<ad::Var>& terms, bool average = true) {
  if (terms.empty()) return t.constant(Matrix(1, 1, 0.0));
  ad::Var s = ad::sum(ad::concat_rows(terms));
  return average ? ad::scale(s, 1.0 / static_cast<double>(terms.size())) : s;
}

}  // namespace

ForwardPass teacher_forced_pass(const Model& m, const Sample& s, ad::Tape& t, const Dropout& drop) {
  if (s.inputs.size() != s.targets.size() || s.grounding.size() != s.targets.size())
    throw std::invalid_argument(s.key + ": inconsistent sample lengths");
  for (int tok : s.inputs) check_token(m, tok);
  for (int tok : s.targets) check_token(m, tok);

  ForwardPass fp;
  Encoded e = encode_inputs(m, s, t, drop);
  DecoderState st = initial_state(m, t);
  std::vector<ad::Var> word_terms, attn_terms, grd_terms;
  for (int step = 0; step < s.steps(); ++step) {
    StepOut out = decode_step(m, e, st, s.inputs[step], drop);
    DecodeStep rec;
    rec.t = step;
    rec.token = s.targets[step];
    rec.h_attention = st.att.h.value().data;
    rec.word_probs = out.probs.value().data;
    rec.alpha = out.alpha.value().data;
    if (s.targets[step] != Vocabulary::kPad)
      word_terms.push_back(ad::pick(out.probs, s.targets[step], 0));
    if (const auto& g = s.grounding[step]) {
      if (g->class_id < 0 || g->class_id >= m.config.num_classes)
        throw std::out_of_range(s.key + ": class id outside the classifier bank");
      ad::Var beta = grounding::conditioned_row(e.logits, out.alpha, g->class_id, g->candidates);
      rec.beta_regions = g->candidates;
      rec.beta = beta.value().data;
      if (m.config.frame_restricted) {
        if (g->has_positive()) {
          attn_terms.push_back(attention::loss(out.alpha, g->gamma));
          grd_terms.push_back(grounding::grounding_loss(beta, g->candidate_gamma));
        }
      } else if (g->has_positive_any()) {
        ad::Var beta_all = grounding::conditioned_row(e.logits, out.alpha, g->class_id, {});
        attn_terms.push_back(attention::loss(out.alpha, g->gamma_any));
        grd_terms.push_back(grounding::grounding_loss(beta_all, g->gamma_any));
      }
    }
    fp.steps.push_back(std::move(rec));
  }
  if (word_terms.empty()) {
    fp.sent = t.constant(Matrix(1, 1, 0.0));
  } else {
    ad::Var nll = ad::sum(ad::neg_log(ad::concat_rows(word_terms)));
    fp.sent = m.config.per_token_loss
                  ? ad::scale(nll, 1.0 / static_cast<double>(word_terms.size()))
                  : nll;
  }
  fp.attn = mean_of(t, attn_terms);
  fp.grd = mean_of(t, grd_terms);
  fp.cls = grounding::classification_loss(e.sim, m.config.frame_restricted ? s.match : s.match_any);
  fp.similarity = e.sim.value();
  fp.components = {fp.sent.scalar(), fp.attn.scalar(), fp.cls.scalar(), fp.grd.scalar()};
  return fp;
}

ForwardPass teacher_forced_pass(const Model& m, const Sample& s) {
  ad::Tape t(false);
  ForwardPass fp = teacher_forced_pass(m, s, t, Dropout{});
  fp.sent = fp.attn = fp.cls = fp.grd = ad::Var{};
  return fp;
}

double sentence_loss(std::span<const DecodeStep> steps, std::span<const int> targets,
                     bool per_token) {
  if (steps.size() != targets.size())
    throw std::invalid_argument("sentence_loss: step and target counts differ");
  double total = 0;
  int n = 0;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    if (targets[i] == Vocabulary::kPad) continue;
    total += -std::log(std::max(steps[i].word_probs.at(targets[i]), 1e-12));
    ++n;
  }
  if (n == 0) return 0.0;
  return per_token ? total / n : total;
}

SampleGradient loss_and_gradient(const Model& m, const Sample& s, const LambdaWeights& lambda,
                                 const Dropout& drop) {
  ad::Tape t(true);
  ForwardPass fp = teacher_forced_pass(m, s, t, drop);
  ad::Var total = joint_loss(fp.sent, fp.attn, fp.cls, fp.grd, lambda);
  t.backward(total);
  SampleGradient out;
  out.loss = joint_loss(fp.components, lambda);
  out.clamped = t.clamp_count();
  for (const Matrix* p : m.parameter_values()) {
    const Matrix* g = t.grad_of(*p);
    out.grads.push_back(g ? *g : Matrix(p->rows, p->cols, 0.0));
  }
  return out;
}

LossBreakdown evaluate_loss(const Model& m, const Sample& s, const LambdaWeights& lambda) {
  return joint_loss(teacher_forced_pass(m, s).components, lambda);
}

// ---- generation ----

namespace {

bool emittable(int tok) { return tok != Vocabulary::kPad && tok != Vocabulary::kBos; }

DecodeStep record(int t, int token, const DecoderState& st, const StepOut& out) {
  DecodeStep r;
  r.t = t;
  r.token = token;
  r.h_attention = st.att.h.value().data;
  r.word_probs = out.probs.value().data;
  r.alpha = out.alpha.value().data;
  return r;
}

Generation greedy(const Model& m, const Sample& s, int max_len) {
  ad::Tape t(false);
  Encoded e = encode_inputs(m, s, t, Dropout{});
  DecoderState st = initial_state(m, t);
  Generation g;
  int prev = Vocabulary::kBos;
  for (int step = 0; step < max_len; ++step) {
    StepOut out = decode_step(m, e, st, prev, Dropout{});
    const auto& p = out.probs.value().data;
    int best = -1;
    for (int v = 0; v < static_cast<int>(p.size()); ++v)
      if (emittable(v) && (best < 0 || p[v] > p[best])) best = v;
    g.log_prob += std::log(p[best]);
    if (best == Vocabulary::kEos) break;
    g.tokens.push_back(best);
    g.steps.push_back(record(step, best, st, out));
    prev = best;
  }
  return g;
}

struct Hypothesis {
  Generation gen;
  DecoderState state;
  int last = Vocabulary::kBos;
  double norm_score = 0;
};

Generation beam_search(const Model& m, const Sample& s, int width, int max_len) {
  ad::Tape t(false);
  Encoded e = encode_inputs(m, s, t, Dropout{});
  std::vector<Hypothesis> live(1);
  live[0].state = initial_state(m, t);
  std::vector<Hypothesis> finished;
  for (int step = 0; step < max_len && !live.empty(); ++step) {
    struct Cand {
      double score;
      int hyp, token;
    };
    std::vector<Cand> cands;
    std::vector<StepOut> outs;
    std::vector<DecoderState> states;
    for (int h = 0; h < static_cast<int>(live.size()); ++h) {
      DecoderState st = live[h].state;
      outs.push_back(decode_step(m, e, st, live[h].last, Dropout{}));
      states.push_back(st);
      const auto& p = outs.back().probs.value().data;
      for (int v = 0; v < static_cast<int>(p.size()); ++v)
        if (emittable(v)) cands.push_back({live[h].gen.log_prob + std::log(p[v]), h, v});
    }
    std::stable_sort(cands.begin(), cands.end(),
                     [](const Cand& a, const Cand& b) { return a.score > b.score; });
    if (static_cast<int>(cands.size()) > width) cands.resize(width);
    std::vector<Hypothesis> next;
    for (const Cand& c : cands) {
      Hypothesis h;
      h.gen = live[c.hyp].gen;
      h.gen.log_prob = c.score;
      h.state = states[c.hyp];
      if (c.token == Vocabulary::kEos) {
        h.norm_score = c.score / static_cast<double>(h.gen.tokens.size() + 1);
        finished.push_back(std::move(h));
        continue;
      }
      h.gen.tokens.push_back(c.token);
      h.gen.steps.push_back(record(step, c.token, states[c.hyp], outs[c.hyp]));
      h.last = c.token;
      if (step + 1 == max_len) {
        h.norm_score = c.score / static_cast<double>(h.gen.tokens.size());
        finished.push_back(std::move(h));
      } else {
        next.push_back(std::move(h));
      }
    }
    live = std::move(next);
  }
  const Hypothesis* best = nullptr;
  for (const auto& h : finished)
    if (!best || h.norm_score > best->norm_score) best = &h;
  return best->gen;
}

}  // namespace

Generation generate(const Model& m, const Sample& s, const GenerateOptions& o) {
  if (o.max_len < 1) throw std::invalid_argument("max_len must be >= 1");
  if (o.mode == DecodeMode::kBeam) {
    if (o.beam < 1) throw std::invalid_argument("beam width must be >= 1");
    return beam_search(m, s, o.beam, o.max_len);
  }
  return greedy(m, s, o.max_len);
}

}  // namespace gvd
