#pragma once

// Region-class similarity, grounding-aware region encoding with a
// self-attention context encoder, sentence-conditioned grounding, and the
// classification and grounding losses.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "gvd/autodiff.hpp"
#include "gvd/nn.hpp"
#include "gvd/regions.hpp"

namespace gvd {

struct ClassifierBank {
  Matrix weights;  // d x K
  Matrix bias;     // K x 1

  int feature_dim() const { return weights.rows; }
  int num_classes() const { return weights.cols; }
};

struct EncoderLayerParams {
  Matrix wq, bq, wk, bk, wv, bv, wo, bo;
  Matrix ln1_gain, ln1_bias;
  Matrix w1, b1, w2, b2;
  Matrix ln2_gain, ln2_bias;
};

struct GroundingEncoderParams {
  Matrix w_loc, b_loc;  // d_s x 5, d_s x 1
  Matrix w_g, b_g;      // m x (d + K + d_s), m x 1
  std::vector<EncoderLayerParams> layers;
  int heads = 4;
  bool use_self_attention = true;
  // ReLU + dropout after the location projection and W_g.
  bool activation = true;
  double dropout = 0.5;
  double encoder_dropout = 0.1;

  int width() const { return w_g.rows; }
};

// Throws ConfigError when the width is not divisible by the head count.
void check_encoder_shape(int width, int heads);

namespace grounding {

// ReLU(W_c^T R) (+ dropout) + B 1^T, K x N. Shared by both similarity forms.
ad::Var class_logits(ad::Var regions, const ClassifierBank& bank, const Dropout& drop,
                     double rate = 0.5);
// Column softmax of the class logits (K x N).
ad::Var similarity(ad::Var logits);
// Projected location embedding (d_s x N).
ad::Var location_embedding(ad::Var loc, const GroundingEncoderParams& p, const Dropout& drop);
// W_g [R | M_s | M_l] (+ b_g, ReLU, dropout), m x N.
ad::Var grounding_aware_encoding(ad::Var regions, ad::Var similarity, ad::Var loc_embedding,
                                 const GroundingEncoderParams& p, const Dropout& drop);
// Post-LN transformer encoder over region columns, no positional encoding.
ad::Var encode_region_context(ad::Var encoded, const GroundingEncoderParams& p,
                              const Dropout& drop);
// Multi-head self-attention sublayer output W_o concat_h(V_h A_h^T) + b_o.
ad::Var self_attention(ad::Var x, const EncoderLayerParams& p, int heads);
// Row softmax of logits + 1 alpha^T, restricted to `candidates` (all if empty),
// for class row `class_id`: 1 x |candidates|.
ad::Var conditioned_row(ad::Var logits, ad::Var alpha, int class_id,
                        std::span<const int> candidates);
// Full K x N row-stochastic conditioned similarity.
ad::Var conditioned_similarity(ad::Var logits, ad::Var alpha);
// Mean over positive regions of -log M_s[class, i]; constant 0 without positives.
ad::Var classification_loss(ad::Var similarity, const PositiveMatch& match);
// -sum_i gamma_i log beta_i; `gamma` aligned with the columns of `beta`.
ad::Var grounding_loss(ad::Var beta, std::span<const std::uint8_t> gamma);

}  // namespace grounding

// ---- evaluation-mode entry points over plain matrices ----

// Column-stochastic K x N similarity. Dropout only when train_mode and rng set.
Matrix region_class_similarity(const Matrix& regions, const ClassifierBank& bank,
                               bool train_mode = false, Rng* rng = nullptr, double rate = 0.5);
Matrix grounding_aware_encoding(const Matrix& regions, const Matrix& similarity,
                                const Matrix& locations, const GroundingEncoderParams& p);
Matrix encode_region_context(const Matrix& encoded, const GroundingEncoderParams& p);

struct ConditionedSimilarity {
  Matrix probs;  // K x N, row-stochastic
  std::vector<double> row(int class_id) const { return probs.row(class_id); }
};
ConditionedSimilarity conditioned_similarity(const Matrix& regions, const ClassifierBank& bank,
                                             std::span<const double> alpha);

struct LossValue {
  double value = 0;
  int terms = 0;    // positives contributing
  bool clamped = false;
};
LossValue classification_loss(const Matrix& similarity, const PositiveMatch& match);
LossValue grounding_loss(const ConditionedSimilarity& cs, int class_id,
                         std::span<const std::uint8_t> gamma);

// ---- classifier transfer ----

using EmbeddingTable = std::unordered_map<std::string, std::vector<double>>;
// Whitespace-separated "word v1 ... vD" lines.
EmbeddingTable load_embedding_table(const std::string& path);

struct SourceClassifiers {
  std::vector<std::string> names;
  Matrix weights;  // d x K_src
  Matrix bias;     // K_src x 1
};
// JSON: {"classes": [{"name": str, "weight": [d floats], "bias": float}, ...]}
SourceClassifiers load_source_classifiers(const std::string& path);

struct TransferReport {
  std::vector<std::optional<int>> source_of;  // per target class
  int transferred() const;
};

// Copies the classifier of the Euclidean nearest source class (in embedding
// space) for every target class with an embedding; others get N(0, 0.02^2).
ClassifierBank init_classifier_transfer(std::span<const std::string> class_names, int feature_dim,
                                        const EmbeddingTable* embeddings,
                                        const SourceClassifiers* source, Rng& rng,
                                        TransferReport* report = nullptr);

}  // namespace gvd
