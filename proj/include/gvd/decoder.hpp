#pragma once

// Two-LSTM language decoder over grounded region and temporal context, the
// joint loss, and caption generation.

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "gvd/attention.hpp"
#include "gvd/corpus.hpp"
#include "gvd/grounding.hpp"
#include "gvd/regions.hpp"

namespace gvd {

struct ModelConfig {
  int feature_dim = 64;   // d
  int num_classes = 8;    // K
  int vocab_size = 0;
  int embed_dim = 16;     // e
  int hidden = 32;        // m
  int loc_dim = 8;        // d_s
  int temporal_dim = 16;  // d_t
  int heads = 4;
  int layers = 2;
  int ff_dim = 64;
  bool self_attention = true;
  bool activation = true;
  double dropout = 0.5;
  double encoder_dropout = 0.1;
  double lm_dropout = 0.0;
  // false: L_sent sums over tokens (per-sentence loss).
  bool per_token_loss = true;
  // Positives for the attention, grounding and classification losses come
  // only from the annotated frame. Evaluation is always frame-restricted.
  bool frame_restricted = true;

  // Throws ConfigError on non-positive dims, odd m, or m % heads != 0.
  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

struct LambdaWeights {
  double alpha = 0;  // attention loss
  double beta = 0;   // grounding loss
  double cls = 0;    // classification loss
};

struct LambdaPreset {
  std::string_view name;
  LambdaWeights weights;
  bool self_attention;
};

std::span<const LambdaPreset> lambda_presets();
// Throws ConfigError for an unknown name.
const LambdaPreset& find_preset(std::string_view name);

struct LossComponents {
  double sent = 0, attn = 0, cls = 0, grd = 0;
};

struct LossBreakdown {
  double sent = 0, attn = 0, cls = 0, grd = 0, total = 0;
};

// total = sent + l_a attn + l_c cls + l_b grd, summed in that order. Throws
// ConfigError for negative weights.
LossBreakdown joint_loss(const LossComponents& c, const LambdaWeights& lambda);
ad::Var joint_loss(ad::Var sent, ad::Var attn, ad::Var cls, ad::Var grd,
                   const LambdaWeights& lambda);

enum class ParamGroup {
  kClassifier,
  kGrounding,
  kAttention,
  kTemporal,
  kEmbedding,
  kAttentionLstm,
  kLanguageLstm,
  kOutput,
};
inline constexpr int kNumParamGroups = 8;
std::string_view group_name(ParamGroup g);

struct ParamEntry {
  std::string name;
  ParamGroup group;
  Matrix* value;
};

struct Model {
  ModelConfig config;
  ClassifierBank bank;
  GroundingEncoderParams encoder;
  RegionAttentionParams region_attention;
  TemporalParams temporal;
  Matrix embedding;  // |V| x e
  LstmParams attention_lstm, language_lstm;
  Matrix w_out, b_out;

  static Model init(const ModelConfig& config, Rng& rng);
  // Stable order; names are unique and used as checkpoint tensor names.
  std::vector<ParamEntry> parameters();
  std::vector<const Matrix*> parameter_values() const;
  std::size_t parameter_count() const;
};

struct WordGrounding {
  int class_id = -1;
  int frame = 0;
  int mention = -1;
  std::vector<BoundingBox> boxes;
  std::vector<std::uint8_t> gamma;            // over all N regions
  std::vector<int> candidates;                // regions on the GT frame
  std::vector<std::uint8_t> candidate_gamma;  // gamma restricted to candidates
  std::vector<std::uint8_t> gamma_any;        // any frame, over all N regions

  bool has_positive() const;
  bool has_positive_any() const;
};

struct Sample {
  std::string key;
  RegionSet regions;
  Matrix locations;  // 5 x N
  Matrix frames;     // d_t x F_t
  SegmentMeta meta;
  std::vector<int> inputs;   // BOS, w_1..w_T
  std::vector<int> targets;  // w_1..w_T, EOS
  std::vector<std::optional<WordGrounding>> grounding;  // per decode step
  std::vector<GroundTruthBox> gt;
  PositiveMatch match;      // against all GT boxes, frame-restricted
  PositiveMatch match_any;  // same, ignoring frames

  int steps() const { return static_cast<int>(targets.size()); }
};

Sample make_sample(std::string key, const EncodedCaption& caption, RegionSet regions,
                   Matrix frames, const SegmentMeta& meta);

struct DecodeStep {
  int t = 0;
  int token = -1;  // target token under teacher forcing, emitted token otherwise
  std::vector<double> h_attention;
  std::vector<double> word_probs;
  std::vector<double> alpha;
  std::vector<int> beta_regions;
  std::vector<double> beta;  // empty unless groundable
};

struct ForwardPass {
  std::vector<DecodeStep> steps;
  Matrix similarity;  // M_s, K x N
  LossComponents components;
  ad::Var sent, attn, cls, grd;
};

// Runs the model on `tape`; when the tape records, the component Vars can be
// combined with joint_loss and differentiated. Throws std::out_of_range for a
// token outside the vocabulary.
ForwardPass teacher_forced_pass(const Model& model, const Sample& sample, ad::Tape& tape,
                                const Dropout& drop = {});
ForwardPass teacher_forced_pass(const Model& model, const Sample& sample);

// Mean (or sum) of -log p(target) over non-PAD targets.
double sentence_loss(std::span<const DecodeStep> steps, std::span<const int> targets,
                     bool per_token = true);

struct SampleGradient {
  LossBreakdown loss;
  std::vector<Matrix> grads;  // aligned with Model::parameters()
  int clamped = 0;
};
SampleGradient loss_and_gradient(const Model& model, const Sample& sample,
                                 const LambdaWeights& lambda, const Dropout& drop = {});
LossBreakdown evaluate_loss(const Model& model, const Sample& sample, const LambdaWeights& lambda);

enum class DecodeMode { kGreedy, kBeam };

struct GenerateOptions {
  DecodeMode mode = DecodeMode::kGreedy;
  int beam = 3;
  int max_len = 20;
};

struct Generation {
  std::vector<int> tokens;         // without EOS
  std::vector<DecodeStep> steps;   // one per emitted word
  double log_prob = 0;
};

// Throws std::invalid_argument for max_len < 1 or beam width < 1.
Generation generate(const Model& model, const Sample& sample, const GenerateOptions& options);

}  // namespace gvd
