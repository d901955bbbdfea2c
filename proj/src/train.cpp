#include "gvd/train.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <ostream>
#include <set>

#include <omp.h>

#include "gvd/errors.hpp"
#include "gvd/kernels.hpp"

namespace gvd {

namespace fs = std::filesystem;

// ---- config ----

TrainConfig TrainConfig::desk() {
  TrainConfig c;
  c.lr = 2e-3;  // small batches, few epochs
  return c;
}

TrainConfig TrainConfig::full() {
  TrainConfig c;
  c.model.feature_dim = 2048;
  c.model.embed_dim = 512;
  c.model.hidden = 1024;
  c.model.loc_dim = 300;
  c.model.temporal_dim = 3072;
  c.model.heads = 8;
  c.model.ff_dim = 2048;
  c.batch_size = 240;
  c.lr = 5e-4;
  return c;
}

void TrainConfig::apply_preset(const std::string& name) {
  const LambdaPreset& p = find_preset(name);
  preset = name;
  lambda = p.weights;
  model.self_attention = p.self_attention;
}

namespace {

nlohmann::json lambda_json(const LambdaWeights& l) {
  return {{"alpha", l.alpha}, {"beta", l.beta}, {"cls", l.cls}};
}

LambdaWeights lambda_from(const nlohmann::json& j) {
  return {j.at("alpha").get<double>(), j.at("beta").get<double>(), j.at("cls").get<double>()};
}

nlohmann::json loss_json(const LossBreakdown& b) {
  return {{"sent", b.sent}, {"attn", b.attn}, {"cls", b.cls}, {"grd", b.grd}, {"total", b.total}};
}

}  // namespace

TrainConfig TrainConfig::from_json(const nlohmann::json& j, bool env_override) {
  static const std::set<std::string> kKeys = {
      "base", "model", "preset", "lambda", "lr", "finetune_lr_multiplier", "lr_decay",
      "lr_decay_every", "batch_size", "epochs", "seed", "threads", "max_len", "val_beam",
      "conf_threshold", "region_cap", "data_dir", "output_dir", "train_split", "val_split",
      "embeddings", "source_classifiers"};
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& [k, v] : j.items())
    if (!kKeys.count(k)) throw ConfigError("unknown config key '" + k + "'");
  const std::string base = j.contains("base") && j.at("base").is_string() ? j.at("base").get<std::string>() : "desk";
  if (base != "desk" && base != "full") throw ConfigError("base must be \"desk\" or \"full\"");
  TrainConfig c = base == "full" ? full() : desk();
  try {
    if (j.contains("model")) {
      nlohmann::json merged = c.model.to_json();
      merged.update(j.at("model"));
      c.model = ModelConfig::from_json(merged);
    }
    c.apply_preset(j.value("preset", c.preset));
    if (j.contains("model") && j.at("model").contains("self_attention"))
      c.model.self_attention = j.at("model").at("self_attention").get<bool>();
    if (j.contains("lambda")) c.lambda = lambda_from(j.at("lambda"));
    c.lr = j.value("lr", c.lr);
    c.finetune_lr_multiplier = j.value("finetune_lr_multiplier", c.finetune_lr_multiplier);
    c.lr_decay = j.value("lr_decay", c.lr_decay);
    c.lr_decay_every = j.value("lr_decay_every", c.lr_decay_every);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs = j.value("epochs", c.epochs);
    c.seed = j.value("seed", c.seed);
    c.threads = j.value("threads", c.threads);
    c.max_len = j.value("max_len", c.max_len);
    c.val_beam = j.value("val_beam", c.val_beam);
    c.conf_threshold = j.value("conf_threshold", c.conf_threshold);
    c.region_cap = j.value("region_cap", c.region_cap);
    c.data_dir = j.value("data_dir", c.data_dir);
    c.output_dir = j.value("output_dir", c.output_dir);
    c.embeddings = j.value("embeddings", c.embeddings);
    c.source_classifiers = j.value("source_classifiers", c.source_classifiers);
    c.train_split = j.value("train_split", c.train_split);
    c.val_split = j.value("val_split", c.val_split);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (env_override) {
    if (const char* s = std::getenv("GVD_SEED")) {
      char* end = nullptr;
      const unsigned long long v = std::strtoull(s, &end, 10);
      if (end == s || *end != '\0') throw ConfigError("GVD_SEED must be an unsigned integer");
      c.seed = v;
    }
  }
  return c;
}

nlohmann::json TrainConfig::to_json() const {
  return {{"model", model.to_json()},
          {"preset", preset},
          {"lambda", lambda_json(lambda)},
          {"lr", lr},
          {"finetune_lr_multiplier", finetune_lr_multiplier},
          {"lr_decay", lr_decay},
          {"lr_decay_every", lr_decay_every},
          {"batch_size", batch_size},
          {"epochs", epochs},
          {"seed", seed},
          {"threads", threads},
          {"max_len", max_len},
          {"val_beam", val_beam},
          {"conf_threshold", conf_threshold},
          {"region_cap", region_cap},
          {"data_dir", data_dir},
          {"output_dir", output_dir},
          {"embeddings", embeddings},
          {"source_classifiers", source_classifiers},
          {"train_split", train_split},
          {"val_split", val_split}};
}

void TrainConfig::validate() const {
  if (!(lr > 0) || !(finetune_lr_multiplier > 0) || !(lr_decay > 0) || lr_decay_every < 1 ||
      batch_size < 1 || epochs < 1 || max_len < 1 || val_beam < 1)
    throw ConfigError("training hyperparameters must be positive");
  if (lambda.alpha < 0 || lambda.beta < 0 || lambda.cls < 0)
    throw ConfigError("loss weights must be non-negative");
  if (embeddings.empty() != source_classifiers.empty())
    throw ConfigError("classifier transfer needs both embeddings and source_classifiers");
}

double TrainConfig::lr_at(int epoch) const {
  return lr * std::pow(lr_decay, epoch / lr_decay_every);
}

// ---- optimizer ----

void Adam::init(const Model& model) {
  m.clear();
  v.clear();
  for (const Matrix* p : model.parameter_values()) {
    m.emplace_back(p->rows, p->cols, 0.0);
    v.emplace_back(p->rows, p->cols, 0.0);
  }
  step_count = 0;
}

void Adam::step(Model& model, const std::vector<Matrix>& grads, const std::vector<double>& lrs) {
  auto params = model.parameters();
  if (m.size() != params.size()) init(model);
  ++step_count;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i].value->data;
    const auto& g = grads[i].data;
    auto& mi = m[i].data;
    auto& vi = v[i].data;
    for (std::size_t k = 0; k < p.size(); ++k) {
      mi[k] = beta1 * mi[k] + (1 - beta1) * g[k];
      vi[k] = beta2 * vi[k] + (1 - beta2) * g[k] * g[k];
      p[k] -= lrs[i] * (mi[k] / c1) / (std::sqrt(vi[k] / c2) + eps);
    }
  }
}

// ---- batches ----

BatchResult batch_gradient(const Model& model, const Dataset& data, std::span<const int> batch,
                           const LambdaWeights& lambda, bool train_mode, std::uint64_t seed,
                           int epoch) {
  const int n = static_cast<int>(batch.size());
  std::vector<SampleGradient> per(n);
  std::vector<std::exception_ptr> errors(n);
#pragma omp parallel for schedule(dynamic, 1)
  for (int i = 0; i < n; ++i) {
    try {
      const int idx = batch[i];
      Rng rng(mix_seed(mix_seed(seed, static_cast<std::uint64_t>(epoch)),
                       static_cast<std::uint64_t>(idx)));
      Dropout drop{train_mode, &rng};
      per[i] = loss_and_gradient(model, data.samples[idx], lambda, drop);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  BatchResult out;
  for (const Matrix* p : model.parameter_values()) out.grads.emplace_back(p->rows, p->cols, 0.0);
  LossComponents mean;
  for (int i = 0; i < n; ++i) {
    for (std::size_t g = 0; g < out.grads.size(); ++g) {
      auto& dst = out.grads[g].data;
      const auto& src = per[i].grads[g].data;
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
    }
    mean.sent += per[i].loss.sent;
    mean.attn += per[i].loss.attn;
    mean.cls += per[i].loss.cls;
    mean.grd += per[i].loss.grd;
  }
  const double inv = 1.0 / n;
  for (auto& g : out.grads)
    for (double& x : g.data) x *= inv;
  mean.sent *= inv;
  mean.attn *= inv;
  mean.cls *= inv;
  mean.grd *= inv;
  out.loss = joint_loss(mean, lambda);
  return out;
}

int select_best_epoch(std::span<const double> cider) {
  int best = -1;
  for (int i = 0; i < static_cast<int>(cider.size()); ++i)
    if (best < 0 || cider[i] > cider[best]) best = i;
  return best;
}

namespace {

bool finite(const LossBreakdown& b) {
  return std::isfinite(b.sent) && std::isfinite(b.attn) && std::isfinite(b.cls) &&
         std::isfinite(b.grd) && std::isfinite(b.total);
}

[[noreturn]] void dump_and_abort(const TrainConfig& config, const Model& model,
                                 const Dataset& data, std::span<const int> batch, int epoch,
                                 long step) {
  nlohmann::json dump;
  dump["epoch"] = epoch;
  dump["step"] = step;
  for (int idx : batch) {
    const LossBreakdown b = evaluate_loss(model, data.samples[idx], config.lambda);
    dump["samples"].push_back({{"index", idx},
                               {"key", data.samples[idx].key},
                               {"inputs", data.samples[idx].inputs},
                               {"eval_loss", loss_json(b)}});
  }
  fs::path where = config.output_dir.empty() ? fs::path(".") : fs::path(config.output_dir);
  fs::create_directories(where);
  save_json(where / "nonfinite_batch.json", dump);
  throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + " step " +
                      std::to_string(step) + "; batch dumped to " +
                      (where / "nonfinite_batch.json").string());
}

}  // namespace

TrainResult train(const TrainConfig& config, const Dataset& train_set, const Dataset* val,
                  const Vocabulary& vocab, const ObjectClassSet& classes, std::ostream* log,
                  const Model* init) {
  config.validate();
  if (train_set.size() == 0) throw DataError("empty training split");
  if (config.threads > 0) kernels::set_num_threads(config.threads);
  ModelConfig mc = config.model;
  mc.vocab_size = vocab.size();
  mc.num_classes = classes.size();
  Rng init_rng(mix_seed(config.seed, 0x5eed));
  TrainResult result{init ? *init : Model::init(mc, init_rng), {}, -1, std::nullopt};
  Model& model = result.model;
  if (!init && !config.embeddings.empty()) {
    const EmbeddingTable table = load_embedding_table(config.embeddings);
    const SourceClassifiers source = load_source_classifiers(config.source_classifiers);
    Rng rng(mix_seed(config.seed, 0x7a5f));
    TransferReport rep;
    model.bank = init_classifier_transfer(classes.names(), mc.feature_dim, &table, &source, rng, &rep);
    if (log)
      *log << nlohmann::json({{"type", "transfer"},
                              {"classes", classes.size()},
                              {"transferred", rep.transferred()}})
                  .dump()
           << "\n";
  }

  std::vector<double> lr_scale;
  for (auto& p : model.parameters())
    lr_scale.push_back(p.group == ParamGroup::kClassifier ? config.finetune_lr_multiplier : 1.0);
  Adam adam;
  adam.init(model);

  std::vector<int> order(train_set.size());
  std::vector<double> val_cider;
  long step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = config.lr_at(epoch);
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle(mix_seed(config.seed, 0x5f1f + static_cast<std::uint64_t>(epoch)));
    for (int i = static_cast<int>(order.size()) - 1; i > 0; --i)
      std::swap(order[i], order[uniform_int(shuffle, i + 1)]);

    EpochSummary summary;
    summary.epoch = epoch;
    summary.lr = lr;
    LossComponents acc;
    int batches = 0;
    std::vector<double> lrs(lr_scale.size());
    for (std::size_t i = 0; i < lrs.size(); ++i) lrs[i] = lr * lr_scale[i];
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      std::span<const int> batch(order.data() + start, end - start);
      BatchResult br = batch_gradient(model, train_set, batch, config.lambda, true, config.seed, epoch);
      if (!finite(br.loss)) dump_and_abort(config, model, train_set, batch, epoch, step);
      adam.step(model, br.grads, lrs);
      if (log) {
        nlohmann::json rec = {{"type", "step"}, {"epoch", epoch}, {"step", step}, {"lr", lr},
                              {"loss", loss_json(br.loss)}};
        *log << rec.dump() << "\n";
      }
      acc.sent += br.loss.sent;
      acc.attn += br.loss.attn;
      acc.cls += br.loss.cls;
      acc.grd += br.loss.grd;
      ++batches;
      ++step;
    }
    acc.sent /= batches;
    acc.attn /= batches;
    acc.cls /= batches;
    acc.grd /= batches;
    summary.train_loss = joint_loss(acc, config.lambda);

    nlohmann::json rec = {{"type", "epoch"}, {"epoch", epoch}, {"lr", lr},
                          {"train_loss", loss_json(summary.train_loss)}};
    if (val && val->size() > 0) {
      EvalOptions eo;
      eo.upper_bound = false;
      eo.decode.max_len = config.max_len;
      if (config.val_beam > 1) {
        eo.decode.mode = DecodeMode::kBeam;
        eo.decode.beam = config.val_beam;
      }
      eo.lambda = config.lambda;
      const EvalResult er = evaluate(model, *val, vocab, classes, eo);
      summary.val_cider = er.report.cider.value_or(0.0);
      summary.val_bleu4 = er.report.bleu4.value_or(0.0);
      summary.val_attention = er.report.attention ? er.report.attention->percent : 0.0;
      summary.val_loss = *er.loss;
      rec["val"] = {{"cider", summary.val_cider},
                    {"bleu4", summary.val_bleu4},
                    {"attn", summary.val_attention},
                    {"loss", loss_json(summary.val_loss)}};
      val_cider.push_back(summary.val_cider);
      if (select_best_epoch(val_cider) == epoch) result.selected = model;
    }
    if (log) *log << rec.dump() << "\n" << std::flush;
    if (!config.output_dir.empty()) {
      char name[32];
      std::snprintf(name, sizeof name, "epoch_%03d", epoch);
      save_checkpoint(fs::path(config.output_dir) / name, model, vocab, classes, config.preset,
                      config.lambda, epoch);
    }
    result.epochs.push_back(summary);
  }
  if (!val_cider.empty()) {
    result.selected_epoch = select_best_epoch(val_cider);
    if (log)
      *log << nlohmann::json({{"type", "selected"},
                              {"epoch", result.selected_epoch},
                              {"cider", val_cider[result.selected_epoch]}})
                  .dump()
           << "\n";
    if (!config.output_dir.empty()) {
      char name[32];
      std::snprintf(name, sizeof name, "epoch_%03d", result.selected_epoch);
      save_json(fs::path(config.output_dir) / "selected.json",
                {{"epoch", result.selected_epoch},
                 {"checkpoint", name},
                 {"cider", val_cider[result.selected_epoch]}});
    }
  }
  return result;
}

// ---- checkpoints ----

namespace {

constexpr int kCheckpointVersion = 1;

void write_f64(const fs::path& path, const Matrix& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  for (double x : m.data) {
    std::uint64_t bits = std::bit_cast<std::uint64_t>(x);
    unsigned char bytes[8];
    for (int b = 0; b < 8; ++b) bytes[b] = static_cast<unsigned char>(bits >> (8 * b));
    out.write(reinterpret_cast<const char*>(bytes), 8);
  }
}

void read_f64(const fs::path& path, Matrix& m) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("missing tensor file " + path.string());
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  if (size != m.size() * 8)
    throw DataError(path.string() + ": expected " + std::to_string(m.size() * 8) + " bytes, found " +
                    std::to_string(size));
  in.seekg(0);
  for (double& x : m.data) {
    unsigned char bytes[8];
    in.read(reinterpret_cast<char*>(bytes), 8);
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(bytes[b]) << (8 * b);
    x = std::bit_cast<double>(bits);
  }
}

std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

void save_checkpoint(const fs::path& dir, const Model& model, const Vocabulary& vocab,
                     const ObjectClassSet& classes, const std::string& preset,
                     const LambdaWeights& lambda, int epoch) {
  fs::create_directories(dir / "tensors");
  nlohmann::ordered_json manifest;
  manifest["format"] = "gvd-checkpoint";
  manifest["version"] = kCheckpointVersion;
  manifest["dtype"] = "float64";
  manifest["epoch"] = epoch;
  manifest["preset"] = preset;
  manifest["lambda"] = lambda_json(lambda);
  manifest["model"] = model.config.to_json();
  manifest["vocab_hash"] = hex(vocab.hash());
  manifest["class_hash"] = hex(classes.hash());
  Model& m = const_cast<Model&>(model);
  for (const auto& p : m.parameters()) {
    write_f64(dir / "tensors" / (p.name + ".f64"), *p.value);
    manifest["tensors"].push_back({{"name", p.name}, {"shape", {p.value->rows, p.value->cols}}});
  }
  std::ofstream(dir / "manifest.json") << manifest.dump(2) << "\n";
  save_json(dir / "vocab.json", vocab.to_json());
  save_json(dir / "classes.json", classes.to_json());
}

Checkpoint load_checkpoint(const fs::path& dir) {
  const nlohmann::json manifest = load_json(dir / "manifest.json");
  Checkpoint ck;
  try {
    if (manifest.at("format") != "gvd-checkpoint") throw DataError("not a checkpoint: " + dir.string());
    if (manifest.at("version").get<int>() != kCheckpointVersion)
      throw DataError("unsupported checkpoint version");
    if (manifest.at("dtype") != "float64") throw DataError("unsupported checkpoint dtype");
    ck.vocab = load_vocabulary(dir / "vocab.json");
    ck.classes = load_classes(dir / "classes.json");
    if (manifest.at("vocab_hash") != hex(ck.vocab.hash()))
      throw DataError(dir.string() + ": vocabulary hash mismatch");
    if (manifest.at("class_hash") != hex(ck.classes.hash()))
      throw DataError(dir.string() + ": class-set hash mismatch");
    ck.preset = manifest.at("preset").get<std::string>();
    ck.lambda = lambda_from(manifest.at("lambda"));
    ck.epoch = manifest.at("epoch").get<int>();
    Rng rng(0);
    ck.model = Model::init(ModelConfig::from_json(manifest.at("model")), rng);
    auto params = ck.model.parameters();
    const auto& tensors = manifest.at("tensors");
    if (tensors.size() != params.size()) throw DataError(dir.string() + ": tensor count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto& t = tensors[i];
      if (t.at("name") != params[i].name ||
          t.at("shape")[0].get<int>() != params[i].value->rows ||
          t.at("shape")[1].get<int>() != params[i].value->cols)
        throw DataError(dir.string() + ": tensor " + params[i].name + " does not match the model");
      read_f64(dir / "tensors" / (params[i].name + ".f64"), *params[i].value);
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(dir.string() + ": " + e.what());
  } catch (const ConfigError& e) {
    throw DataError(dir.string() + ": " + e.what());
  }
  return ck;
}

// ---- evaluation ----

std::vector<ReferenceObject> reference_objects(const Sample& s) {
  std::vector<ReferenceObject> out;
  std::set<int> seen;
  for (const auto& g : s.grounding)
    if (g && seen.insert(g->class_id).second) out.push_back({g->class_id, g->frame, g->boxes});
  return out;
}

EvalResult evaluate(const Model& model, const Dataset& data, const Vocabulary& vocab,
                    const ObjectClassSet& classes, const EvalOptions& options) {
  const int n = static_cast<int>(data.size());
  struct PerSample {
    std::vector<LocalizationRecord> attn, grd;
    Matrix similarity;
    LossBreakdown loss;
    Generation gen;
  };
  std::vector<PerSample> per(n);
  std::vector<std::exception_ptr> errors(n);
#pragma omp parallel for schedule(dynamic, 1)
  for (int i = 0; i < n; ++i) {
    try {
      const Sample& s = data.samples[i];
      PerSample& out = per[i];
      if (options.gt_grounding || options.lambda) {
        ForwardPass fp = teacher_forced_pass(model, s);
        if (options.lambda) out.loss = joint_loss(fp.components, *options.lambda);
        std::set<int> seen;
        for (int t = 0; t < s.steps(); ++t) {
          const auto& g = s.grounding[t];
          if (!g || !seen.insert(g->class_id).second) continue;
          const int pa = argmax_over(fp.steps[t].alpha, g->candidates, false);
          const int pb = argmax_over(fp.steps[t].beta, g->candidates, true);
          out.attn.push_back(make_record(s.regions, g->class_id, pa, g->boxes));
          out.grd.push_back(make_record(s.regions, g->class_id, pb, g->boxes));
        }
        out.similarity = std::move(fp.similarity);
      }
      if (options.generation) out.gen = generate(model, s, options.decode);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  EvalResult res;
  MetricReport& r = res.report;
  r.class_names = classes.names();
  if (options.gt_grounding) {
    std::vector<LocalizationRecord> attn, grd;
    std::vector<Matrix> sims;
    std::vector<PositiveMatch> matches;
    for (int i = 0; i < n; ++i) {
      attn.insert(attn.end(), per[i].attn.begin(), per[i].attn.end());
      grd.insert(grd.end(), per[i].grd.begin(), per[i].grd.end());
      sims.push_back(per[i].similarity);
      matches.push_back(data.samples[i].match);
    }
    r.attention = gt_localization_accuracy(attn);
    r.grounding = gt_localization_accuracy(grd);
    r.classification = classification_accuracy(sims, matches);
    for (const auto* s : {&*r.attention, &*r.grounding, &*r.classification})
      if (s->warning) r.warnings.push_back(*s->warning);
  }
  if (options.upper_bound) {
    std::vector<CoverageItem> items;
    for (const auto& s : data.samples) items.push_back({&s.regions, reference_objects(s)});
    r.upper_bound = localization_upper_bound(items);
    if (r.upper_bound->warning) r.warnings.push_back(*r.upper_bound->warning);
  }
  if (options.lambda) {
    LossComponents mean;
    for (const auto& p : per) {
      mean.sent += p.loss.sent;
      mean.attn += p.loss.attn;
      mean.cls += p.loss.cls;
      mean.grd += p.loss.grd;
    }
    if (n > 0) {
      mean.sent /= n;
      mean.attn /= n;
      mean.cls /= n;
      mean.grd /= n;
    }
    res.loss = joint_loss(mean, *options.lambda);
  }
  if (options.generation) {
    CaptionMap cands, refs;
    std::vector<F1Segment> segs;
    for (int i = 0; i < n; ++i) {
      const Sample& s = data.samples[i];
      const auto words = vocab.decode(per[i].gen.tokens);
      std::string text;
      for (const auto& w : words) text += (text.empty() ? "" : " ") + w;
      cands[s.key] = {text};
      refs[s.key] = {data.references[i]};
      F1Segment seg;
      seg.regions = &s.regions;
      seg.references = reference_objects(s);
      for (const auto& step : per[i].gen.steps) {
        const auto c = classes.class_of(vocab.token(step.token));
        seg.generated.push_back({c ? *c : -1, step.alpha});
      }
      segs.push_back(std::move(seg));
    }
    if (n > 0) {
      r.bleu1 = bleu(cands, refs, 1);
      r.bleu4 = bleu(cands, refs, 4);
      std::optional<std::string> warn;
      r.cider = cider(cands, refs, nullptr, &warn);
      if (warn) r.warnings.push_back(*warn);
    }
    const auto counts = f1_counts(segs);
    r.f1_all = generation_f1(counts, F1Mode::kAll);
    r.f1_loc = generation_f1(counts, F1Mode::kLoc);
    for (auto& p : per) res.generations.push_back(std::move(p.gen));
  }
  return res;
}

}  // namespace gvd
