#pragma once

// Seeded synthetic corpus with planted region-class correlations.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "gvd/corpus.hpp"

namespace gvd {

struct SyntheticSpec {
  std::vector<std::string> class_words = {"man", "dog", "car", "ball",
                                          "woman", "horse", "tree", "bike"};
  std::vector<double> class_weights;  // empty: uniform
  std::vector<std::string> verbs = {"runs", "jumps", "sits", "turns"};
  int frames = 3;
  int regions_per_frame = 5;
  // Distractor regions per segment; -1 fills every frame to regions_per_frame.
  int distractors = -1;
  int max_mentions = 3;
  int feature_dim = 64;
  int temporal_dim = 16;
  int temporal_frames = 4;
  double separation = 3.0;
  double noise = 0.5;
  double temporal_noise = 0.1;
  double frame_w = 320, frame_h = 240;
  int segments_per_video = 2;
  int train = 500, val = 100, test = 0;
  std::uint64_t seed = 7;

  void validate() const;
  nlohmann::json to_json() const;
  static SyntheticSpec from_json(const nlohmann::json& j);
};

struct SyntheticCorpus {
  std::map<std::string, std::vector<SegmentAnnotation>> splits;  // train/val/test
  std::map<std::string, RawRegionFile> regions;                   // by stem
  std::map<std::string, Matrix> frames;                           // by stem, d_t x F_t
  Matrix class_means;  // d x K, unit columns
};

SyntheticCorpus make_synthetic(const SyntheticSpec& spec);

// Writes <dir>/{train,val,test}.jsonl, features/, vocab.json, classes.json and
// spec.json.
void write_synthetic(const std::filesystem::path& dir, const SyntheticSpec& spec,
                     const SyntheticCorpus& corpus);

// Exact probability that class k is among `count` classes drawn without
// replacement with probability proportional to `weights`.
std::vector<double> inclusion_probabilities(std::span<const double> weights, int count);

}  // namespace gvd
