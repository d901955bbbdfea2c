#include "gvd/grounding.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "gvd/errors.hpp"

namespace gvd {

void check_encoder_shape(int width, int heads) {
  if (heads < 1 || width % heads != 0)
    throw ConfigError("self-attention width " + std::to_string(width) +
                      " is not divisible by head count " + std::to_string(heads));
}

namespace grounding {

ad::Var class_logits(ad::Var regions, const ClassifierBank& bank, const Dropout& drop,
                     double rate) {
  ad::Tape& t = *regions.tape;
  if (regions.rows() != bank.feature_dim())
    throw ConfigError("region feature dimension does not match the classifier bank");
  ad::Var scores = ad::relu(ad::matmul(t.param(bank.weights), regions, /*trans_a=*/true));
  scores = drop.apply(scores, rate);
  return ad::add_col_bias(scores, t.param(bank.bias));
}

ad::Var similarity(ad::Var logits) { return ad::softmax_cols(logits); }

ad::Var location_embedding(ad::Var loc, const GroundingEncoderParams& p, const Dropout& drop) {
  ad::Var e = linear(loc, p.w_loc, p.b_loc);
  if (p.activation) e = drop.apply(ad::relu(e), p.dropout);
  return e;
}

ad::Var grounding_aware_encoding(ad::Var regions, ad::Var sim, ad::Var loc_embedding,
                                 const GroundingEncoderParams& p, const Dropout& drop) {
  const ad::Var parts[] = {regions, sim, loc_embedding};
  ad::Var stacked = ad::concat_rows(parts);
  if (stacked.rows() != p.w_g.cols)
    throw ConfigError("grounding-aware encoding input has " + std::to_string(stacked.rows()) +
                      " rows, W_g expects " + std::to_string(p.w_g.cols));
  ad::Var e = linear(stacked, p.w_g, p.b_g);
  if (p.activation) e = drop.apply(ad::relu(e), p.dropout);
  return e;
}

ad::Var self_attention(ad::Var x, const EncoderLayerParams& p, int heads) {
  const int width = x.rows();
  check_encoder_shape(width, heads);
  const int dk = width / heads;
  ad::Var q = linear(x, p.wq, p.bq);
  ad::Var k = linear(x, p.wk, p.bk);
  ad::Var v = linear(x, p.wv, p.bv);
  std::vector<ad::Var> outs;
  outs.reserve(heads);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  for (int h = 0; h < heads; ++h) {
    ad::Var qh = ad::slice_rows(q, h * dk, dk);
    ad::Var kh = ad::slice_rows(k, h * dk, dk);
    ad::Var vh = ad::slice_rows(v, h * dk, dk);
    // scores(i, j): query i against key j.
    ad::Var attn = ad::softmax_rows(ad::scale(ad::matmul(qh, kh, true, false), scale));
    outs.push_back(ad::matmul(vh, attn, false, true));
  }
  return linear(ad::concat_rows(outs), p.wo, p.bo);
}

ad::Var encode_region_context(ad::Var encoded, const GroundingEncoderParams& p,
                              const Dropout& drop) {
  check_encoder_shape(encoded.rows(), p.heads);
  ad::Tape& t = *encoded.tape;
  ad::Var x = encoded;
  for (const auto& layer : p.layers) {
    ad::Var a = drop.apply(self_attention(x, layer, p.heads), p.encoder_dropout);
    x = ad::layer_norm_cols(ad::add(x, a), t.param(layer.ln1_gain), t.param(layer.ln1_bias));
    ad::Var f = linear(ad::relu(linear(x, layer.w1, layer.b1)), layer.w2, layer.b2);
    f = drop.apply(f, p.encoder_dropout);
    x = ad::layer_norm_cols(ad::add(x, f), t.param(layer.ln2_gain), t.param(layer.ln2_bias));
  }
  return x;
}

ad::Var conditioned_row(ad::Var logits, ad::Var alpha, int class_id,
                        std::span<const int> candidates) {
  if (alpha.rows() != logits.cols() || alpha.cols() != 1)
    throw std::invalid_argument("conditioned similarity: alpha length must equal region count");
  ad::Var row = ad::add_row_broadcast(ad::slice_rows(logits, class_id, 1), alpha);
  if (!candidates.empty()) row = ad::gather_cols(row, candidates);
  return ad::softmax_rows(row);
}

ad::Var conditioned_similarity(ad::Var logits, ad::Var alpha) {
  if (alpha.rows() != logits.cols() || alpha.cols() != 1)
    throw std::invalid_argument("conditioned similarity: alpha length must equal region count");
  return ad::softmax_rows(ad::add_row_broadcast(logits, alpha));
}

ad::Var classification_loss(ad::Var sim, const PositiveMatch& match) {
  ad::Tape& t = *sim.tape;
  const auto pos = match.positive_indices();
  if (pos.empty()) return t.constant(Matrix(1, 1, 0.0));
  std::vector<ad::Var> terms;
  terms.reserve(pos.size());
  for (int i : pos) terms.push_back(ad::pick(sim, match.matched_class[i], i));
  ad::Var picked = ad::concat_rows(terms);
  return ad::scale(ad::sum(ad::neg_log(picked)), 1.0 / static_cast<double>(pos.size()));
}

ad::Var grounding_loss(ad::Var beta, std::span<const std::uint8_t> gamma) {
  ad::Tape& t = *beta.tape;
  if (static_cast<int>(gamma.size()) != beta.cols() || beta.rows() != 1)
    throw std::invalid_argument("grounding_loss: gamma length must match beta");
  std::vector<ad::Var> terms;
  for (int i = 0; i < beta.cols(); ++i)
    if (gamma[i]) terms.push_back(ad::pick(beta, 0, i));
  if (terms.empty()) return t.constant(Matrix(1, 1, 0.0));
  return ad::sum(ad::neg_log(ad::concat_rows(terms)));
}

}  // namespace grounding

namespace {

void check_finite(const Matrix& m, const char* what) {
  for (double v : m.data)
    if (!std::isfinite(v)) throw std::invalid_argument(std::string(what) + ": non-finite input");
}

}  // namespace

Matrix region_class_similarity(const Matrix& regions, const ClassifierBank& bank, bool train_mode,
                               Rng* rng, double rate) {
  check_finite(regions, "region_class_similarity");
  check_finite(bank.weights, "region_class_similarity");
  check_finite(bank.bias, "region_class_similarity");
  ad::Tape t(false);
  Dropout drop{train_mode, rng};
  return grounding::similarity(grounding::class_logits(t.input(regions), bank, drop, rate)).value();
}

Matrix grounding_aware_encoding(const Matrix& regions, const Matrix& sim, const Matrix& locations,
                                const GroundingEncoderParams& p) {
  if (regions.cols != sim.cols || regions.cols != locations.cols)
    throw ConfigError("grounding_aware_encoding: region count mismatch");
  ad::Tape t(false);
  Dropout none;
  ad::Var loc = grounding::location_embedding(t.input(locations), p, none);
  return grounding::grounding_aware_encoding(t.input(regions), t.input(sim), loc, p, none).value();
}

Matrix encode_region_context(const Matrix& encoded, const GroundingEncoderParams& p) {
  if (encoded.cols < 1) throw std::invalid_argument("encode_region_context: no regions");
  ad::Tape t(false);
  return grounding::encode_region_context(t.input(encoded), p, Dropout{}).value();
}

ConditionedSimilarity conditioned_similarity(const Matrix& regions, const ClassifierBank& bank,
                                             std::span<const double> alpha) {
  if (static_cast<int>(alpha.size()) != regions.cols)
    throw std::invalid_argument("conditioned_similarity: alpha length mismatch");
  ad::Tape t(false);
  ad::Var logits = grounding::class_logits(t.input(regions), bank, Dropout{});
  ad::Var a = t.constant(Matrix::column(alpha));
  return {grounding::conditioned_similarity(logits, a).value()};
}

LossValue classification_loss(const Matrix& sim, const PositiveMatch& match) {
  ad::Tape t(false);
  ad::Var v = grounding::classification_loss(t.input(sim), match);
  return {v.scalar(), match.positives(), t.clamp_count() > 0};
}

LossValue grounding_loss(const ConditionedSimilarity& cs, int class_id,
                         std::span<const std::uint8_t> gamma) {
  ad::Tape t(false);
  ad::Var beta = ad::slice_rows(t.input(cs.probs), class_id, 1);
  ad::Var v = grounding::grounding_loss(beta, gamma);
  int pos = 0;
  for (auto g : gamma) pos += g ? 1 : 0;
  return {v.scalar(), pos, t.clamp_count() > 0};
}

// ---- transfer ----

EmbeddingTable load_embedding_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open embedding table " + path);
  EmbeddingTable table;
  std::string line;
  int lineno = 0;
  std::size_t dim = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ss(line);
    std::string word;
    if (!(ss >> word)) continue;
    std::vector<double> v;
    double x;
    while (ss >> x) v.push_back(x);
    if (!ss.eof()) throw DataError(path + ": line " + std::to_string(lineno) + ": bad number");
    if (dim == 0) dim = v.size();
    if (v.empty() || v.size() != dim)
      throw DataError(path + ": line " + std::to_string(lineno) + ": inconsistent dimension");
    table[word] = std::move(v);
  }
  return table;
}

SourceClassifiers load_source_classifiers(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open source classifiers " + path);
  SourceClassifiers s;
  try {
    const auto j = nlohmann::json::parse(in);
    const auto& classes = j.at("classes");
    const int k = static_cast<int>(classes.size());
    int d = -1;
    for (int c = 0; c < k; ++c) {
      const auto w = classes[c].at("weight").get<std::vector<double>>();
      if (d < 0) {
        d = static_cast<int>(w.size());
        s.weights = Matrix(d, k);
        s.bias = Matrix(k, 1);
      }
      if (static_cast<int>(w.size()) != d) throw DataError(path + ": inconsistent weight length");
      s.names.push_back(classes[c].at("name").get<std::string>());
      for (int r = 0; r < d; ++r) s.weights(r, c) = w[r];
      s.bias.data[c] = classes[c].value("bias", 0.0);
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path + ": " + e.what());
  }
  return s;
}

int TransferReport::transferred() const {
  int n = 0;
  for (const auto& s : source_of) n += s.has_value() ? 1 : 0;
  return n;
}

ClassifierBank init_classifier_transfer(std::span<const std::string> class_names, int feature_dim,
                                        const EmbeddingTable* embeddings,
                                        const SourceClassifiers* source, Rng& rng,
                                        TransferReport* report) {
  const int k = static_cast<int>(class_names.size());
  ClassifierBank bank{Matrix(feature_dim, k), Matrix(k, 1)};
  fill_normal(bank.weights, rng, 0.02);
  TransferReport local;
  local.source_of.assign(k, std::nullopt);
  if (source && embeddings && source->weights.rows == feature_dim) {
    for (int c = 0; c < k; ++c) {
      const auto it = embeddings->find(class_names[c]);
      if (it == embeddings->end()) continue;
      double best = std::numeric_limits<double>::infinity();
      int best_s = -1;
      for (int s = 0; s < static_cast<int>(source->names.size()); ++s) {
        const auto sit = embeddings->find(source->names[s]);
        if (sit == embeddings->end() || sit->second.size() != it->second.size()) continue;
        double d2 = 0;
        for (std::size_t i = 0; i < it->second.size(); ++i) {
          const double diff = it->second[i] - sit->second[i];
          d2 += diff * diff;
        }
        if (d2 < best) {
          best = d2;
          best_s = s;
        }
      }
      if (best_s < 0) continue;
      for (int r = 0; r < feature_dim; ++r) bank.weights(r, c) = source->weights(r, best_s);
      bank.bias.data[c] = source->bias.data[best_s];
      local.source_of[c] = best_s;
    }
  }
  if (report) *report = std::move(local);
  return bank;
}

}  // namespace gvd
