#pragma once

// A small synthetic data directory under the system temp dir, loaded back
// through the same path the CLI uses.

#include <filesystem>
#include <string>
#include <unistd.h>

#include "gvd/dataset.hpp"
#include "gvd/synthetic.hpp"
#include "gvd/train.hpp"

namespace gvd::oracle {

inline std::filesystem::path scratch_dir(const std::string& tag) {
  auto p = std::filesystem::temp_directory_path() /
           ("gvd_" + tag + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

struct SynthData {
  std::filesystem::path dir;
  SyntheticSpec spec;
  Vocabulary vocab;
  ObjectClassSet classes;
  Dataset train, val;
};

inline SyntheticSpec small_spec(std::uint64_t seed = 3) {
  SyntheticSpec s;
  s.class_words = {"man", "dog", "car", "ball"};
  s.feature_dim = 12;
  s.temporal_dim = 8;
  s.regions_per_frame = 3;
  s.frames = 2;
  s.train = 24;
  s.val = 8;
  s.seed = seed;
  return s;
}

inline Dataset load_synth_split(const std::filesystem::path& dir, const std::string& split,
                                const Vocabulary& vocab, const ObjectClassSet& classes) {
  const DataDir dd{dir};
  return build_dataset(load_annotations(dd.split(split).string()), vocab, classes,
                       directory_features(dd.features()));
}

inline SynthData make_synth_data(const std::filesystem::path& dir, const SyntheticSpec& spec) {
  SynthData d;
  d.dir = dir;
  d.spec = spec;
  write_synthetic(dir, spec, make_synthetic(spec));
  const DataDir dd{dir};
  d.vocab = load_vocabulary(dd.vocab());
  d.classes = load_classes(dd.classes());
  d.train = load_synth_split(dir, "train", d.vocab, d.classes);
  d.val = load_synth_split(dir, "val", d.vocab, d.classes);
  return d;
}

inline TrainConfig small_train_config(const SynthData& d) {
  TrainConfig c = TrainConfig::desk();
  c.model.feature_dim = d.spec.feature_dim;
  c.model.temporal_dim = d.spec.temporal_dim;
  c.model.embed_dim = 8;
  c.model.hidden = 12;
  c.model.loc_dim = 4;
  c.model.heads = 2;
  c.model.layers = 1;
  c.model.ff_dim = 16;
  c.batch_size = 8;
  c.epochs = 2;
  c.max_len = 8;
  return c;
}

}  // namespace gvd::oracle
