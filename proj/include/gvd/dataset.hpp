#pragma once

// Split loading: annotations + vocabulary + classes + per-segment feature
// files turned into decoder samples.

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "gvd/corpus.hpp"
#include "gvd/decoder.hpp"

namespace gvd {

// "<video_id>_<segment_index>"
std::string segment_stem(const SegmentAnnotation& a);

struct FeatureSource {
  std::function<RegionSet(const std::string& stem)> regions;
  std::function<Matrix(const std::string& stem)> frames;
};

// Reads `<dir>/<stem>.feat` / `.tfeat` with the given proposal filters.
FeatureSource directory_features(const std::filesystem::path& dir, double conf_threshold = 0.2,
                                 int cap = 100);

struct Dataset {
  std::vector<SegmentAnnotation> annotations;
  std::vector<Sample> samples;
  std::vector<std::string> references;  // lowercased, truncated caption text

  std::size_t size() const { return samples.size(); }
};

// Video duration is the largest end_s among that video's segments in `corpus`.
Dataset build_dataset(std::vector<SegmentAnnotation> corpus, const Vocabulary& vocab,
                      const ObjectClassSet& classes, const FeatureSource& features);

// Layout of a prepared data directory.
struct DataDir {
  std::filesystem::path root;

  std::filesystem::path split(const std::string& name) const { return root / (name + ".jsonl"); }
  std::filesystem::path vocab() const { return root / "vocab.json"; }
  std::filesystem::path classes() const { return root / "classes.json"; }
  std::filesystem::path features() const { return root / "features"; }
};

Vocabulary load_vocabulary(const std::filesystem::path& path);
ObjectClassSet load_classes(const std::filesystem::path& path);
void save_json(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json load_json(const std::filesystem::path& path);

}  // namespace gvd
