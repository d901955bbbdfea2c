#pragma once

// Optimizer, training loop, checkpoints and split evaluation.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "gvd/dataset.hpp"
#include "gvd/decoder.hpp"
#include "gvd/metrics.hpp"

namespace gvd {

struct TrainConfig {
  ModelConfig model;
  std::string preset = "sup-attn-cls";
  LambdaWeights lambda{0.05, 0.0, 0.1};
  double lr = 5e-4;
  double finetune_lr_multiplier = 0.1;  // classifier bank
  double lr_decay = 0.8;
  int lr_decay_every = 3;
  int batch_size = 16;
  int epochs = 40;
  std::uint64_t seed = 1;
  int threads = 0;  // 0: OpenMP default
  int max_len = 20;
  int val_beam = 1;
  double conf_threshold = 0.2;
  int region_cap = 100;
  std::string data_dir;
  std::string output_dir;
  // Classifier transfer init; both paths or neither.
  std::string embeddings;          // "word v1 ... vD" text
  std::string source_classifiers;  // JSON classifier bank
  std::string train_split = "train";
  std::string val_split = "val";

  // Desk-scale defaults and the full-scale dims.
  static TrainConfig desk();
  static TrainConfig full();

  // Sets lambda and the encoder switch from a named preset.
  void apply_preset(const std::string& name);
  // Unknown keys are rejected. `GVD_SEED` overrides "seed" when set.
  static TrainConfig from_json(const nlohmann::json& j, bool env_override = true);
  nlohmann::json to_json() const;
  void validate() const;

  // Stepwise: lr * decay^floor(epoch / every).
  double lr_at(int epoch) const;
};

struct Adam {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  long step_count = 0;
  std::vector<Matrix> m, v;

  void init(const Model& model);
  // One update; `lrs[i]` is the learning rate for parameter i.
  void step(Model& model, const std::vector<Matrix>& grads, const std::vector<double>& lrs);
};

// Mean gradient and mean loss over `batch`, summed in index order. Sample i
// draws dropout masks from mix_seed(seed, epoch, i).
struct BatchResult {
  LossBreakdown loss;
  std::vector<Matrix> grads;
};
BatchResult batch_gradient(const Model& model, const Dataset& data, std::span<const int> batch,
                           const LambdaWeights& lambda, bool train_mode, std::uint64_t seed,
                           int epoch);

struct EpochSummary {
  int epoch = 0;
  double lr = 0;
  LossBreakdown train_loss;
  double val_cider = 0;
  double val_bleu4 = 0;
  double val_attention = 0;
  LossBreakdown val_loss;
};

struct TrainResult {
  Model model;  // after the final epoch
  std::vector<EpochSummary> epochs;
  int selected_epoch = -1;
  std::optional<Model> selected;
};

// First epoch with the highest validation CIDEr.
int select_best_epoch(std::span<const double> cider);

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Trains on `train`; validates once per epoch when `val` is given. Writes JSON
// Lines step/epoch records to `log` and checkpoints under output_dir when it
// is non-empty. A non-finite loss dumps the batch and throws TrainingError.
TrainResult train(const TrainConfig& config, const Dataset& train, const Dataset* val,
                  const Vocabulary& vocab, const ObjectClassSet& classes, std::ostream* log,
                  const Model* init = nullptr);

// ---- checkpoints ----

struct Checkpoint {
  Model model;
  Vocabulary vocab;
  ObjectClassSet classes;
  std::string preset;
  LambdaWeights lambda;
  int epoch = -1;
};

void save_checkpoint(const std::filesystem::path& dir, const Model& model, const Vocabulary& vocab,
                     const ObjectClassSet& classes, const std::string& preset,
                     const LambdaWeights& lambda, int epoch);
// Throws DataError on a missing file, shape mismatch or hash mismatch.
Checkpoint load_checkpoint(const std::filesystem::path& dir);

// ---- evaluation ----

struct EvalOptions {
  bool gt_grounding = true;
  bool generation = true;
  bool upper_bound = true;
  GenerateOptions decode;
  std::optional<LambdaWeights> lambda;  // also report the loss breakdown
};

struct EvalResult {
  MetricReport report;
  std::vector<Generation> generations;
  std::optional<LossBreakdown> loss;
};

EvalResult evaluate(const Model& model, const Dataset& data, const Vocabulary& vocab,
                    const ObjectClassSet& classes, const EvalOptions& options);

// First instance per class of the sample's annotated object words.
std::vector<ReferenceObject> reference_objects(const Sample& sample);

}  // namespace gvd
