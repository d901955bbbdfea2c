#include "gvd/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "gvd/dataset.hpp"
#include "gvd/errors.hpp"
#include "gvd/rng.hpp"

namespace gvd {

namespace fs = std::filesystem;

void SyntheticSpec::validate() const {
  const int k = static_cast<int>(class_words.size());
  auto need = [](bool ok, const char* msg) {
    if (!ok) throw ConfigError(std::string("synthetic spec: ") + msg);
  };
  need(k >= 2, "need at least two classes");
  need(class_weights.empty() || static_cast<int>(class_weights.size()) == k,
       "class_weights must match class_words");
  for (double w : class_weights) need(w > 0, "class weights must be positive");
  need(!verbs.empty(), "need at least one verb");
  need(frames >= 1 && regions_per_frame >= 1 && regions_per_frame <= 6,
       "frames >= 1 and 1 <= regions_per_frame <= 6 (3x2 grid)");
  need(max_mentions >= 1 && max_mentions <= k && max_mentions <= regions_per_frame,
       "max_mentions must fit the classes and one frame");
  need(feature_dim >= k, "feature_dim must be >= number of classes");
  need(temporal_dim >= k + static_cast<int>(verbs.size()),
       "temporal_dim must be >= classes + verbs");
  need(temporal_frames >= 1, "temporal_frames must be >= 1");
  need(separation > 0 && noise >= 0 && temporal_noise >= 0, "separation > 0, noise >= 0");
  need(segments_per_video >= 1, "segments_per_video must be >= 1");
  need(train >= 0 && val >= 0 && test >= 0 && train + val + test > 0, "split sizes");
  need(frame_w > 0 && frame_h > 0, "frame size");
}

nlohmann::json SyntheticSpec::to_json() const {
  return {{"class_words", class_words},
          {"class_weights", class_weights},
          {"verbs", verbs},
          {"frames", frames},
          {"regions_per_frame", regions_per_frame},
          {"distractors", distractors},
          {"max_mentions", max_mentions},
          {"feature_dim", feature_dim},
          {"temporal_dim", temporal_dim},
          {"temporal_frames", temporal_frames},
          {"separation", separation},
          {"noise", noise},
          {"temporal_noise", temporal_noise},
          {"frame_w", frame_w},
          {"frame_h", frame_h},
          {"segments_per_video", segments_per_video},
          {"train", train},
          {"val", val},
          {"test", test},
          {"seed", seed}};
}

SyntheticSpec SyntheticSpec::from_json(const nlohmann::json& j) {
  SyntheticSpec s;
  try {
    nlohmann::json merged = s.to_json();
    for (const auto& [k, v] : j.items()) {
      if (!merged.contains(k)) throw ConfigError("synthetic spec: unknown key '" + k + "'");
      merged[k] = v;
    }
    s.class_words = merged.at("class_words").get<std::vector<std::string>>();
    s.class_weights = merged.at("class_weights").get<std::vector<double>>();
    s.verbs = merged.at("verbs").get<std::vector<std::string>>();
    s.frames = merged.at("frames");
    s.regions_per_frame = merged.at("regions_per_frame");
    s.distractors = merged.at("distractors");
    s.max_mentions = merged.at("max_mentions");
    s.feature_dim = merged.at("feature_dim");
    s.temporal_dim = merged.at("temporal_dim");
    s.temporal_frames = merged.at("temporal_frames");
    s.separation = merged.at("separation");
    s.noise = merged.at("noise");
    s.temporal_noise = merged.at("temporal_noise");
    s.frame_w = merged.at("frame_w");
    s.frame_h = merged.at("frame_h");
    s.segments_per_video = merged.at("segments_per_video");
    s.train = merged.at("train");
    s.val = merged.at("val");
    s.test = merged.at("test");
    s.seed = merged.at("seed");
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("synthetic spec: ") + e.what());
  }
  return s;
}

namespace {

Matrix orthonormal_columns(int d, int k, Rng& rng) {
  Matrix m(d, k);
  for (int c = 0; c < k; ++c) {
    std::vector<double> v(d);
    for (double& x : v) x = normal(rng);
    for (int p = 0; p < c; ++p) {
      double dot = 0;
      for (int r = 0; r < d; ++r) dot += v[r] * m(r, p);
      for (int r = 0; r < d; ++r) v[r] -= dot * m(r, p);
    }
    double norm = 0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    for (int r = 0; r < d; ++r) m(r, c) = v[r] / norm;
  }
  return m;
}

std::vector<int> sample_without_replacement(std::vector<double> weights, int count, Rng& rng) {
  std::vector<int> out;
  for (int n = 0; n < count; ++n) {
    const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
    double u = uniform01(rng) * total;
    int pick = -1;
    for (int k = 0; k < static_cast<int>(weights.size()); ++k) {
      if (weights[k] <= 0) continue;
      pick = k;
      if (u < weights[k]) break;
      u -= weights[k];
    }
    out.push_back(pick);
    weights[pick] = 0;
  }
  std::sort(out.begin(), out.end());
  return out;
}

BoundingBox cell_box(int cell, const SyntheticSpec& s, Rng& rng) {
  const double cw = s.frame_w / 3, ch = s.frame_h / 2;
  const double x0 = (cell % 3) * cw, y0 = (cell / 3) * ch;
  const double mx1 = (0.05 + 0.15 * uniform01(rng)) * cw, mx2 = (0.05 + 0.15 * uniform01(rng)) * cw;
  const double my1 = (0.05 + 0.15 * uniform01(rng)) * ch, my2 = (0.05 + 0.15 * uniform01(rng)) * ch;
  return {x0 + mx1, y0 + my1, x0 + cw - mx2, y0 + ch - my2};
}

}  // namespace

SyntheticCorpus make_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const int k = static_cast<int>(spec.class_words.size());
  Rng rng(spec.seed);
  SyntheticCorpus out;
  out.class_means = orthonormal_columns(spec.feature_dim, k, rng);
  std::vector<double> weights = spec.class_weights;
  if (weights.empty()) weights.assign(k, 1.0);

  const int total = spec.train + spec.val + spec.test;
  for (int i = 0; i < total; ++i) {
    const char* split = i < spec.train ? "train" : i < spec.train + spec.val ? "val" : "test";
    SegmentAnnotation a;
    char vid[32];
    std::snprintf(vid, sizeof vid, "syn%05d", i / spec.segments_per_video);
    a.video_id = vid;
    a.segment_index = i % spec.segments_per_video;
    a.total_segments = spec.segments_per_video;
    a.start_s = 10.0 * a.segment_index;
    a.end_s = a.start_s + 10.0;

    const int count = 1 + uniform_int(rng, spec.max_mentions);
    const std::vector<int> cls = sample_without_replacement(weights, count, rng);
    const int verb = uniform_int(rng, static_cast<int>(spec.verbs.size()));

    // Cells per frame in random order; planted regions take the first free cell.
    std::vector<std::vector<int>> free_cells(spec.frames);
    for (auto& cells : free_cells) {
      cells = {0, 1, 2, 3, 4, 5};
      for (int c = 5; c > 0; --c) std::swap(cells[c], cells[uniform_int(rng, c + 1)]);
      cells.resize(spec.regions_per_frame);
    }
    struct Planned {
      int frame, cls;
      BoundingBox box;
    };
    std::vector<Planned> regions;
    for (int m = 0; m < count; ++m) {
      int frame = uniform_int(rng, spec.frames);
      while (free_cells[frame].empty()) frame = (frame + 1) % spec.frames;
      const int cell = free_cells[frame].back();
      free_cells[frame].pop_back();
      const BoundingBox box = cell_box(cell, spec, rng);
      regions.push_back({frame, cls[m], box});

      EntityMention em;
      em.np_text = "a " + spec.class_words[cls[m]];
      em.frame_index = frame;
      em.boxes = {box};
      em.labels = {spec.class_words[cls[m]]};
      if (m > 0) a.caption.push_back("and");
      const int at = static_cast<int>(a.caption.size());
      em.token_span = {at, at + 1};
      a.caption.push_back("a");
      a.caption.push_back(spec.class_words[cls[m]]);
      a.mentions.push_back(std::move(em));
    }
    a.caption.push_back(spec.verbs[verb]);

    std::vector<int> unmentioned;
    for (int c = 0; c < k; ++c)
      if (!std::binary_search(cls.begin(), cls.end(), c)) unmentioned.push_back(c);
    int budget = spec.distractors;
    for (int f = 0; budget != 0 && !unmentioned.empty(); f = (f + 1) % spec.frames) {
      bool any = false;
      for (const auto& cells : free_cells) any = any || !cells.empty();
      if (!any) break;
      if (free_cells[f].empty()) continue;
      const int cell = free_cells[f].back();
      free_cells[f].pop_back();
      const int c = unmentioned[uniform_int(rng, static_cast<int>(unmentioned.size()))];
      regions.push_back({f, c, cell_box(cell, spec, rng)});
      if (budget > 0) --budget;
    }
    std::stable_sort(regions.begin(), regions.end(),
                     [](const Planned& x, const Planned& y) { return x.frame < y.frame; });

    RawRegionFile file;
    file.num_frames = spec.frames;
    file.frame_w = spec.frame_w;
    file.frame_h = spec.frame_h;
    for (const auto& r : regions) {
      Proposal p;
      p.box = r.box;
      p.confidence = 0.3 + 0.7 * uniform01(rng);
      p.feature.resize(spec.feature_dim);
      for (int d = 0; d < spec.feature_dim; ++d)
        p.feature[d] = spec.separation * out.class_means(d, r.cls) + spec.noise * normal(rng);
      file.frames.push_back(r.frame);
      file.proposals.push_back(std::move(p));
    }
    Matrix frames(spec.temporal_dim, spec.temporal_frames);
    for (int f = 0; f < spec.temporal_frames; ++f) {
      for (int d = 0; d < spec.temporal_dim; ++d) frames(d, f) = spec.temporal_noise * normal(rng);
      for (int c : cls) frames(c, f) += 1.0;
      frames(k + verb, f) += 1.0;
    }
    const std::string stem = segment_stem(a);
    out.regions[stem] = std::move(file);
    out.frames[stem] = std::move(frames);
    out.splits[split].push_back(std::move(a));
  }
  return out;
}

void write_synthetic(const fs::path& dir, const SyntheticSpec& spec, const SyntheticCorpus& corpus) {
  fs::create_directories(dir / "features");
  const DataDir dd{dir};
  for (const char* split : {"train", "val", "test"}) {
    const auto it = corpus.splits.find(split);
    if (it == corpus.splits.end()) continue;
    save_annotations(dd.split(split).string(), it->second);
  }
  for (const auto& [stem, file] : corpus.regions) write_region_file(dd.features() / stem, file);
  for (const auto& [stem, frames] : corpus.frames) write_temporal_file(dd.features() / stem, frames);

  std::vector<SegmentAnnotation> train_val;
  for (const char* split : {"train", "val"}) {
    const auto it = corpus.splits.find(split);
    if (it != corpus.splits.end()) train_val.insert(train_val.end(), it->second.begin(), it->second.end());
  }
  const auto train_it = corpus.splits.find("train");
  const std::vector<SegmentAnnotation> empty;
  const auto& train = train_it == corpus.splits.end() ? empty : train_it->second;
  save_json(dd.vocab(), Vocabulary::build(train, 1, 20).to_json());
  save_json(dd.classes(), ObjectClassSet::derive(train_val, 1, HeuristicTagger{}).to_json());
  save_json(dir / "spec.json", spec.to_json());
}

std::vector<double> inclusion_probabilities(std::span<const double> weights, int count) {
  const int k = static_cast<int>(weights.size());
  std::vector<double> incl(k, 0.0);
  std::vector<char> used(k, 0);
  // Depth-first over ordered draw sequences.
  auto rec = [&](auto& self, int depth, double prob, double remaining) -> void {
    if (depth == count) {
      for (int c = 0; c < k; ++c)
        if (used[c]) incl[c] += prob;
      return;
    }
    for (int c = 0; c < k; ++c) {
      if (used[c]) continue;
      used[c] = 1;
      self(self, depth + 1, prob * weights[c] / remaining, remaining - weights[c]);
      used[c] = 0;
    }
  };
  rec(rec, 0, 1.0, std::accumulate(weights.begin(), weights.end(), 0.0));
  return incl;
}

}  // namespace gvd
