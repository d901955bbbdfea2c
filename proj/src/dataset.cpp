#include "gvd/dataset.hpp"

#include <fstream>
#include <map>

#include "gvd/errors.hpp"

namespace gvd {

std::string segment_stem(const SegmentAnnotation& a) {
  return a.video_id + "_" + std::to_string(a.segment_index);
}

FeatureSource directory_features(const std::filesystem::path& dir, double conf_threshold, int cap) {
  FeatureSource src;
  src.regions = [=](const std::string& stem) {
    return load_region_set(dir / stem, conf_threshold, cap);
  };
  src.frames = [=](const std::string& stem) { return read_temporal_file(dir / stem); };
  return src;
}

Dataset build_dataset(std::vector<SegmentAnnotation> corpus, const Vocabulary& vocab,
                      const ObjectClassSet& classes, const FeatureSource& features) {
  std::map<std::string, double> duration;
  for (const auto& a : corpus) {
    double& d = duration[a.video_id];
    d = std::max(d, a.end_s);
  }
  Dataset ds;
  ds.samples.reserve(corpus.size());
  for (const auto& a : corpus) {
    const std::string stem = segment_stem(a);
    const EncodedCaption enc = encode_caption(a, vocab, classes);
    SegmentMeta meta{a.total_segments, a.segment_index, a.start_s, a.end_s,
                     duration.at(a.video_id)};
    ds.samples.push_back(make_sample(stem, enc, features.regions(stem), features.frames(stem), meta));
    std::string ref;
    const int n = std::min<int>(static_cast<int>(a.caption.size()), vocab.max_caption_length());
    for (int i = 0; i < n; ++i) ref += (i ? " " : "") + to_lower(a.caption[i]);
    ds.references.push_back(std::move(ref));
  }
  ds.annotations = std::move(corpus);
  return ds;
}

nlohmann::json load_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void save_json(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

Vocabulary load_vocabulary(const std::filesystem::path& path) {
  try {
    return Vocabulary::from_json(load_json(path));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

ObjectClassSet load_classes(const std::filesystem::path& path) {
  try {
    return ObjectClassSet::from_json(load_json(path));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

}  // namespace gvd
