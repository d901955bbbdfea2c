#include "gvd/cli.hpp"

#include <chrono>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "gvd/dataset.hpp"
#include "gvd/errors.hpp"
#include "gvd/gradcheck.hpp"
#include "gvd/kernels.hpp"
#include "gvd/overlay.hpp"
#include "gvd/synthetic.hpp"
#include "gvd/train.hpp"

namespace gvd {

namespace fs = std::filesystem;

namespace {

constexpr int kUsage = 1;
constexpr int kData = 2;
constexpr int kCheckFailed = 3;

std::vector<SegmentAnnotation> read_corpus(const std::string& path, const std::string& importer,
                                           ParseReport* report) {
  if (importer.empty()) return load_annotations(path, report);
  const ImporterConfig cfg = ImporterConfig::from_json(load_json(importer));
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  return import_annotations(in, cfg, report);
}

void print_report_warnings(const ParseReport& r, std::ostream& err) {
  if (r.dropped_mentions > 0) err << "warning: dropped " << r.dropped_mentions << " mentions\n";
  const std::size_t shown = std::min<std::size_t>(r.warnings.size(), 10);
  for (std::size_t i = 0; i < shown; ++i) err << "warning: " << r.warnings[i] << "\n";
  if (r.warnings.size() > shown) err << "warning: ... " << r.warnings.size() - shown << " more\n";
}

std::string fixed(double v, int p = 4) {
  std::ostringstream o;
  o << std::fixed << std::setprecision(p) << v;
  return o.str();
}

// ---- prepare ----

struct PrepareArgs {
  std::string train, val, test;
  std::string import_file, importer_config, split_file;
  std::string train_key = "training", val_key = "validation", test_key = "testing";
  std::string out, features, preset = "anet";
  int min_count = -1, max_len = -1, class_threshold = -1;
};

int cmd_prepare(const PrepareArgs& a, std::ostream& out, std::ostream& err) {
  CorpusPreset p = a.preset == "flickr" ? kFlickrPreset : kActivityNetPreset;
  if (a.preset != "anet" && a.preset != "flickr") throw ConfigError("preset must be anet or flickr");
  if (a.min_count > 0) p.min_count = a.min_count;
  if (a.max_len > 0) p.max_len = a.max_len;
  if (a.class_threshold >= 0) p.class_threshold = a.class_threshold;

  std::map<std::string, std::vector<SegmentAnnotation>> splits;
  ParseReport report;
  if (!a.import_file.empty()) {
    if (a.importer_config.empty()) throw ConfigError("--import needs --importer-config");
    ImporterConfig cfg = ImporterConfig::from_json(load_json(a.importer_config));
    if (!a.split_file.empty()) cfg.split_file = a.split_file;
    const std::pair<const char*, std::string> keys[] = {
        {"train", a.train_key}, {"val", a.val_key}, {"test", a.test_key}};
    for (const auto& [name, key] : keys) {
      ImporterConfig c = cfg;
      if (!c.split_file.empty()) c.split_key = key;
      else if (std::string(name) != "train") continue;
      std::ifstream in(a.import_file);
      if (!in) throw DataError("cannot open " + a.import_file);
      splits[name] = import_annotations(in, c, &report);
    }
  } else {
    if (a.train.empty()) throw ConfigError("prepare needs --train (or --import)");
    splits["train"] = load_annotations(a.train, &report);
    if (!a.val.empty()) splits["val"] = load_annotations(a.val, &report);
    if (!a.test.empty()) splits["test"] = load_annotations(a.test, &report);
  }
  print_report_warnings(report, err);

  std::vector<SegmentAnnotation> train_val = splits["train"];
  if (splits.count("val")) train_val.insert(train_val.end(), splits["val"].begin(), splits["val"].end());
  const Vocabulary vocab = Vocabulary::build(splits["train"], p.min_count, p.max_len);
  const ObjectClassSet classes = ObjectClassSet::derive(train_val, p.class_threshold, HeuristicTagger{});

  const DataDir dd{a.out};
  fs::create_directories(dd.root);
  for (const auto& [name, corpus] : splits) save_annotations(dd.split(name).string(), corpus);
  save_json(dd.vocab(), vocab.to_json());
  save_json(dd.classes(), classes.to_json());
  if (!a.features.empty() && !fs::exists(dd.features()))
    fs::create_directory_symlink(fs::absolute(a.features), dd.features());
  for (const auto& [name, corpus] : splits) out << name << " segments: " << corpus.size() << "\n";
  out << "vocabulary: " << vocab.size() << "\n";
  out << "object classes: " << classes.size() << " (threshold " << p.class_threshold << ")\n";
  return 0;
}

// ---- stats ----

int cmd_stats(const std::vector<std::string>& files, const std::string& importer, int threshold,
              bool as_json, std::ostream& out, std::ostream& err) {
  std::vector<SegmentAnnotation> corpus;
  ParseReport report;
  for (const auto& f : files) {
    auto part = read_corpus(f, importer, &report);
    corpus.insert(corpus.end(), part.begin(), part.end());
  }
  print_report_warnings(report, err);
  const CorpusStats s = corpus_stats(corpus);
  const int k = ObjectClassSet::derive(corpus, threshold, HeuristicTagger{}).size();
  if (as_json) {
    auto j = s.to_json();
    j.erase("label_histogram");
    j["object_classes"] = k;
    j["class_threshold"] = threshold;
    out << j.dump(2) << "\n";
    return 0;
  }
  auto opt = [](const std::optional<double>& v, int p = 2) { return v ? fixed(*v, p) : std::string("n/a"); };
  const std::pair<std::string, std::string> rows[] = {
      {"segments", std::to_string(s.segments)},
      {"segments with mentions", std::to_string(s.segments_with_mentions)},
      {"mentions", std::to_string(s.mentions)},
      {"boxes", std::to_string(s.boxes)},
      {"boxes per segment (mean)", opt(s.boxes_per_segment_mean)},
      {"boxes per segment (std)", opt(s.boxes_per_segment_std)},
      {"labels per box (mean)", opt(s.labels_per_box_mean)},
      {"multi-instance fraction", opt(s.multi_instance_fraction, 3)},
      {"object classes (threshold " + std::to_string(threshold) + ")", std::to_string(k)},
  };
  for (const auto& [key, v] : rows) out << std::left << std::setw(34) << key << v << "\n";
  return 0;
}

// ---- synth ----

int cmd_synth(const std::string& dir, const std::string& spec_file, std::optional<std::uint64_t> seed,
              std::optional<int> train, std::optional<int> val, std::optional<int> test,
              std::ostream& out) {
  SyntheticSpec spec = spec_file.empty() ? SyntheticSpec{} : SyntheticSpec::from_json(load_json(spec_file));
  if (seed) spec.seed = *seed;
  if (train) spec.train = *train;
  if (val) spec.val = *val;
  if (test) spec.test = *test;
  const SyntheticCorpus corpus = make_synthetic(spec);
  write_synthetic(dir, spec, corpus);
  out << "wrote " << spec.train << " train / " << spec.val << " val / " << spec.test
      << " test segments to " << dir << "\n";
  return 0;
}

// ---- train / eval / generate ----

struct LoadedData {
  Vocabulary vocab;
  ObjectClassSet classes;
};

Dataset load_split(const DataDir& dd, const std::string& split, const Vocabulary& vocab,
                   const ObjectClassSet& classes, double conf_threshold, int cap) {
  ParseReport report;
  auto corpus = load_annotations(dd.split(split).string(), &report);
  return build_dataset(std::move(corpus), vocab, classes,
                       directory_features(dd.features(), conf_threshold, cap));
}

struct TrainArgs {
  std::string config, data, out, preset, log;
  std::optional<int> epochs, threads;
  std::optional<std::uint64_t> seed;
};

int cmd_train(const TrainArgs& a, std::ostream& out) {
  TrainConfig cfg = a.config.empty() ? TrainConfig::desk() : TrainConfig::from_json(load_json(a.config));
  if (a.config.empty()) {
    if (const char* s = std::getenv("GVD_SEED")) cfg.seed = std::stoull(s);
  }
  if (!a.preset.empty()) cfg.apply_preset(a.preset);
  if (!a.data.empty()) cfg.data_dir = a.data;
  if (!a.out.empty()) cfg.output_dir = a.out;
  if (a.epochs) cfg.epochs = *a.epochs;
  if (a.seed) cfg.seed = *a.seed;
  if (a.threads) cfg.threads = *a.threads;
  if (cfg.data_dir.empty()) throw ConfigError("train needs a data directory (--data or data_dir)");
  if (cfg.output_dir.empty()) throw ConfigError("train needs an output directory (--out or output_dir)");

  const DataDir dd{cfg.data_dir};
  const Vocabulary vocab = load_vocabulary(dd.vocab());
  const ObjectClassSet classes = load_classes(dd.classes());
  const Dataset train_set = load_split(dd, cfg.train_split, vocab, classes, cfg.conf_threshold, cfg.region_cap);
  std::optional<Dataset> val;
  if (fs::exists(dd.split(cfg.val_split)))
    val = load_split(dd, cfg.val_split, vocab, classes, cfg.conf_threshold, cfg.region_cap);
  if (train_set.size() == 0) throw DataError("training split is empty");
  cfg.model.feature_dim = train_set.samples[0].regions.feature_dim();
  cfg.model.temporal_dim = train_set.samples[0].frames.rows;

  fs::create_directories(cfg.output_dir);
  save_json(fs::path(cfg.output_dir) / "config.json", cfg.to_json());
  const fs::path log_path = a.log.empty() ? fs::path(cfg.output_dir) / "log.jsonl" : fs::path(a.log);
  std::ofstream log(log_path);
  if (!log) throw DataError("cannot write " + log_path.string());
  const auto start = std::chrono::steady_clock::now();
  const TrainResult r = train(cfg, train_set, val ? &*val : nullptr, vocab, classes, &log);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  for (const auto& e : r.epochs)
    out << "epoch " << e.epoch << "  lr " << e.lr << "  loss " << fixed(e.train_loss.total)
        << "  (sent " << fixed(e.train_loss.sent) << ")"
        << (val ? "  val CIDEr " + fixed(100 * e.val_cider, 2) + "  Attn. " + fixed(e.val_attention, 2) : "")
        << "\n";
  if (r.selected_epoch >= 0) out << "selected epoch " << r.selected_epoch << "\n";
  out << "trained in " << fixed(secs, 1) << " s; log " << log_path.string() << "\n";
  return 0;
}

struct EvalArgs {
  std::string checkpoint, data, split = "val", preset, json;
  bool gt_grounding = false, per_class = false;
  int beam = 1, max_len = 20;
};

Checkpoint load_checked(const std::string& ck_dir, const DataDir& dd) {
  Checkpoint ck = load_checkpoint(ck_dir);
  if (fs::exists(dd.vocab()) && load_vocabulary(dd.vocab()).hash() != ck.vocab.hash())
    throw DataError("vocabulary of " + dd.root.string() + " does not match the checkpoint");
  if (fs::exists(dd.classes()) && load_classes(dd.classes()).hash() != ck.classes.hash())
    throw DataError("object classes of " + dd.root.string() + " do not match the checkpoint");
  return ck;
}

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  const DataDir dd{a.data};
  const Checkpoint ck = load_checked(a.checkpoint, dd);
  const Dataset data = load_split(dd, a.split, ck.vocab, ck.classes, 0.2, 100);
  EvalOptions eo;
  eo.gt_grounding = a.gt_grounding;
  eo.upper_bound = a.gt_grounding;
  eo.decode.max_len = a.max_len;
  if (a.beam > 1) {
    eo.decode.mode = DecodeMode::kBeam;
    eo.decode.beam = a.beam;
  } else if (a.beam < 1) {
    throw ConfigError("--beam must be >= 1");
  }
  std::string preset = ck.preset;
  LambdaWeights lambda = ck.lambda;
  if (!a.preset.empty()) {
    preset = a.preset;
    lambda = find_preset(a.preset).weights;
  }
  eo.lambda = lambda;
  const EvalResult r = evaluate(ck.model, data, ck.vocab, ck.classes, eo);
  out << "preset " << preset << ": lambda_alpha=" << lambda.alpha << " lambda_beta=" << lambda.beta
      << " lambda_cls=" << lambda.cls << "\n";
  out << "split " << a.split << ": " << data.size() << " segments\n";
  out << r.report.to_table(a.per_class);
  if (r.loss)
    out << "loss: total " << fixed(r.loss->total) << " = sent " << fixed(r.loss->sent) << " + "
        << lambda.alpha << " * attn " << fixed(r.loss->attn) << " + " << lambda.cls << " * cls "
        << fixed(r.loss->cls) << " + " << lambda.beta << " * grd " << fixed(r.loss->grd) << "\n";
  if (!a.json.empty()) {
    auto j = r.report.to_json(a.per_class);
    j["preset"] = preset;
    j["lambda"] = {{"alpha", lambda.alpha}, {"beta", lambda.beta}, {"cls", lambda.cls}};
    if (r.loss)
      j["loss"] = {{"sent", r.loss->sent}, {"attn", r.loss->attn}, {"cls", r.loss->cls},
                   {"grd", r.loss->grd}, {"total", r.loss->total}};
    if (a.json == "-") {
      out << j.dump(2) << "\n";
    } else {
      std::ofstream f(a.json);
      if (!f) throw DataError("cannot write " + a.json);
      f << j.dump(2) << "\n";
    }
  }
  return 0;
}

struct GenerateArgs {
  std::string checkpoint, data, split = "val", overlays, output;
  int beam = 1, max_len = 20, limit = -1;
};

int cmd_generate(const GenerateArgs& a, std::ostream& out) {
  const DataDir dd{a.data};
  const Checkpoint ck = load_checked(a.checkpoint, dd);
  Dataset data = load_split(dd, a.split, ck.vocab, ck.classes, 0.2, 100);
  GenerateOptions go;
  go.max_len = a.max_len;
  if (a.beam > 1) {
    go.mode = DecodeMode::kBeam;
    go.beam = a.beam;
  } else if (a.beam < 1) {
    throw ConfigError("--beam must be >= 1");
  }
  std::ofstream file;
  if (!a.output.empty()) {
    file.open(a.output);
    if (!file) throw DataError("cannot write " + a.output);
  }
  std::ostream& dst = a.output.empty() ? out : file;
  const int n = a.limit >= 0 ? std::min<int>(a.limit, static_cast<int>(data.size()))
                             : static_cast<int>(data.size());
  for (int i = 0; i < n; ++i) {
    const Sample& s = data.samples[i];
    const Generation g = generate(ck.model, s, go);
    std::string text;
    for (const auto& w : ck.vocab.decode(g.tokens)) text += (text.empty() ? "" : " ") + w;
    dst << s.key << "\t" << text << "\n";
    if (!a.overlays.empty()) write_overlays(a.overlays, s, g, ck.vocab, ck.classes);
  }
  return 0;
}

// ---- gradcheck ----

int cmd_gradcheck(std::uint64_t seed, const std::vector<std::string>& presets, double threshold,
                  bool as_json, std::ostream& out) {
  if (!(threshold > 0)) throw ConfigError("--threshold must be positive");
  GradcheckOptions o;
  o.seed = seed;
  o.threshold = threshold;
  o.presets = presets;
  const GradcheckResult r = finite_diff_check(o);
  if (as_json) {
    nlohmann::ordered_json j;
    j["seed"] = seed;
    j["parameters"] = r.parameters;
    j["max_rel_error"] = r.max_rel;
    j["threshold"] = threshold;
    j["passed"] = r.passed;
    j["seconds"] = r.seconds;
    for (const auto& pc : r.presets) {
      nlohmann::ordered_json g;
      for (const auto& e : pc.groups) g[std::string(group_name(e.group))] = e.rel;
      j["presets"][pc.preset] = g;
    }
    out << j.dump(2) << "\n";
  } else {
    for (const auto& pc : r.presets) {
      out << std::left << std::setw(18) << pc.preset << " max rel " << std::scientific
          << std::setprecision(2) << pc.max_rel << "  ";
      for (const auto& e : pc.groups) out << " " << group_name(e.group) << "=" << e.rel;
      out << std::defaultfloat << "\n";
    }
    out << "perturbed " << r.parameters << " scalars in " << fixed(r.seconds, 1) << " s; max rel error "
        << std::scientific << std::setprecision(3) << r.max_rel << std::defaultfloat
        << (r.passed ? "  PASS" : "  FAIL") << "\n";
  }
  return r.passed ? 0 : kCheckFailed;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"gvd: region-grounded video captioning"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "OpenMP threads (0: default)");

  PrepareArgs pa;
  auto* prepare = app.add_subcommand("prepare", "import annotations, build vocabulary and classes");
  prepare->add_option("--train", pa.train, "canonical JSONL train split");
  prepare->add_option("--val", pa.val, "canonical JSONL val split");
  prepare->add_option("--test", pa.test, "canonical JSONL test split");
  prepare->add_option("--import", pa.import_file, "raw annotation release (JSON)");
  prepare->add_option("--importer-config", pa.importer_config, "field mapping for --import");
  prepare->add_option("--split-file", pa.split_file, "video-id split lists for --import");
  prepare->add_option("--train-key", pa.train_key);
  prepare->add_option("--val-key", pa.val_key);
  prepare->add_option("--test-key", pa.test_key);
  prepare->add_option("--out", pa.out, "output data directory")->required();
  prepare->add_option("--features", pa.features, "feature directory to link as <out>/features");
  prepare->add_option("--preset", pa.preset, "anet or flickr")->check(CLI::IsMember({"anet", "flickr"}));
  prepare->add_option("--min-count", pa.min_count);
  prepare->add_option("--max-len", pa.max_len);
  prepare->add_option("--class-threshold", pa.class_threshold);

  std::vector<std::string> stat_files;
  std::string stat_importer;
  int stat_threshold = 50;
  bool stat_json = false;
  auto* stats = app.add_subcommand("stats", "dataset statistics");
  stats->add_option("files", stat_files, "annotation files")->required();
  stats->add_option("--importer-config", stat_importer, "read raw release files with this mapping");
  stats->add_option("--class-threshold", stat_threshold);
  stats->add_flag("--json", stat_json);

  std::string synth_dir, synth_spec;
  std::optional<std::uint64_t> synth_seed;
  std::optional<int> synth_train, synth_val, synth_test;
  auto* synth = app.add_subcommand("synth", "write a synthetic corpus with features");
  synth->add_option("--out", synth_dir)->required();
  synth->add_option("--spec", synth_spec, "JSON synthetic spec");
  synth->add_option("--seed", synth_seed);
  synth->add_option("--train", synth_train);
  synth->add_option("--val", synth_val);
  synth->add_option("--test", synth_test);

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "train a model");
  train_cmd->add_option("--config", ta.config, "JSON training config");
  train_cmd->add_option("--data", ta.data);
  train_cmd->add_option("--out", ta.out);
  train_cmd->add_option("--preset", ta.preset, "loss-weight preset");
  train_cmd->add_option("--epochs", ta.epochs);
  train_cmd->add_option("--seed", ta.seed);
  train_cmd->add_option("--log", ta.log, "JSON Lines log (default <out>/log.jsonl)");

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a split");
  eval->add_option("--checkpoint", ea.checkpoint)->required();
  eval->add_option("--data", ea.data)->required();
  eval->add_option("--split", ea.split);
  eval->add_flag("--gt-grounding", ea.gt_grounding, "Attn./Grd./Cls. on ground-truth sentences");
  eval->add_flag("--per-class", ea.per_class);
  eval->add_option("--preset", ea.preset, "loss weights for the reported loss");
  eval->add_option("--json", ea.json, "write the JSON report here ('-' for stdout)");
  eval->add_option("--beam", ea.beam);
  eval->add_option("--max-len", ea.max_len);

  GenerateArgs ga;
  auto* gen = app.add_subcommand("generate", "generate captions (and overlays)");
  gen->add_option("--checkpoint", ga.checkpoint)->required();
  gen->add_option("--data", ga.data)->required();
  gen->add_option("--split", ga.split);
  gen->add_option("--beam", ga.beam);
  gen->add_option("--max-len", ga.max_len);
  gen->add_option("--limit", ga.limit);
  gen->add_option("--overlays", ga.overlays, "directory for PNG overlays and sidecars");
  gen->add_option("--output", ga.output, "write captions here instead of stdout");

  std::uint64_t gc_seed = 1;
  std::vector<std::string> gc_presets;
  bool gc_json = false;
  double gc_threshold = GradcheckOptions{}.threshold;
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient check");
  gradcheck->add_option("--seed", gc_seed);
  gradcheck->add_option("--preset", gc_presets, "restrict to these presets");
  gradcheck->add_option("--threshold", gc_threshold, "max relative error (default 1e-4)");
  gradcheck->add_flag("--json", gc_json);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    const CLI::App* sub = nullptr;
    for (const auto* s : app.get_subcommands()) sub = s;
    err << (sub ? sub->help() : app.help());
    return kUsage;
  }

  try {
    if (threads > 0) kernels::set_num_threads(threads);
    if (*prepare) return cmd_prepare(pa, out, err);
    if (*stats) return cmd_stats(stat_files, stat_importer, stat_threshold, stat_json, out, err);
    if (*synth) return cmd_synth(synth_dir, synth_spec, synth_seed, synth_train, synth_val, synth_test, out);
    if (*train_cmd) return cmd_train(ta, out);
    if (*eval) return cmd_eval(ea, out);
    if (*gen) return cmd_generate(ga, out);
    if (*gradcheck) return cmd_gradcheck(gc_seed, gc_presets, gc_threshold, gc_json, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const DataError& e) {
    err << "error: " << e.what() << "\n";
    return kData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kData;
  }
  return kUsage;
}

}  // namespace gvd
