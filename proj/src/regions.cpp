#include "gvd/regions.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "gvd/errors.hpp"

namespace gvd {

using nlohmann::json;

double iou(const BoundingBox& a, const BoundingBox& b) {
  if (!a.valid() || !b.valid()) throw std::invalid_argument("iou: degenerate box");
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  return inter / (a.area() + b.area() - inter);
}

std::pair<int, int> RegionSet::local_index(int i) const {
  const int f = frames_[i];
  const auto& v = per_frame_[f];
  const auto it = std::lower_bound(v.begin(), v.end(), i);
  return {f, static_cast<int>(it - v.begin())};
}

Region RegionSet::region(int i) const {
  return Region{boxes_[i], frames_[i], conf_[i], features_.col(i)};
}

RegionSet RegionSet::from_regions(int num_frames, int feature_dim, double frame_w,
                                  double frame_h, std::span<const Region> regions) {
  RegionSet out(num_frames, feature_dim, frame_w, frame_h);
  const int n = static_cast<int>(regions.size());
  out.features_ = Matrix(feature_dim, n);
  for (int i = 0; i < n; ++i) {
    const Region& r = regions[i];
    if (r.frame_index < 0 || r.frame_index >= num_frames)
      throw DataError("region frame index out of range");
    if (i > 0 && r.frame_index < regions[i - 1].frame_index)
      throw std::logic_error("RegionSet::from_regions: regions must be frame-major");
    if (static_cast<int>(r.feature.size()) != feature_dim)
      throw DataError("inconsistent region feature dimension");
    if (!r.box.valid()) throw DataError("region box has non-positive area");
    for (int k = 0; k < feature_dim; ++k) out.features_(k, i) = r.feature[k];
    out.boxes_.push_back(r.box);
    out.frames_.push_back(r.frame_index);
    out.conf_.push_back(r.confidence);
    out.per_frame_[r.frame_index].push_back(i);
  }
  return out;
}

RegionSet assemble_region_set(const std::vector<std::vector<Proposal>>& per_frame,
                              double frame_w, double frame_h, double conf_threshold, int cap) {
  int d = -1;
  for (const auto& frame : per_frame)
    for (const auto& p : frame) {
      if (d < 0) d = static_cast<int>(p.feature.size());
      if (static_cast<int>(p.feature.size()) != d)
        throw DataError("inconsistent proposal feature dimensions");
    }
  const int num_frames = static_cast<int>(per_frame.size());
  std::vector<Region> kept;
  for (int f = 0; f < num_frames; ++f) {
    const auto& props = per_frame[f];
    std::vector<int> idx;
    for (int i = 0; i < static_cast<int>(props.size()); ++i)
      if (props[i].confidence > conf_threshold) idx.push_back(i);
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
      return props[a].confidence > props[b].confidence;
    });
    if (static_cast<int>(idx.size()) > cap) idx.resize(cap);
    for (int i : idx) kept.push_back(Region{props[i].box, f, props[i].confidence, props[i].feature});
  }
  return RegionSet::from_regions(num_frames, std::max(d, 0), frame_w, frame_h, kept);
}

int PositiveMatch::positives() const {
  return static_cast<int>(std::count(gamma.begin(), gamma.end(), 1));
}

std::vector<int> PositiveMatch::positive_indices() const {
  std::vector<int> out;
  for (int i = 0; i < static_cast<int>(gamma.size()); ++i)
    if (gamma[i]) out.push_back(i);
  return out;
}

PositiveMatch match_positives(const RegionSet& regions, std::span<const GroundTruthBox> gt,
                              double threshold, bool frame_restricted) {
  const int n = regions.size();
  PositiveMatch m;
  m.gamma.assign(n, 0);
  m.matched_class.assign(n, -1);
  m.matched_gt.assign(n, -1);
  m.best_iou.assign(n, 0.0);
  for (int i = 0; i < n; ++i) {
    double best = -1.0;
    int best_g = -1;
    for (int g = 0; g < static_cast<int>(gt.size()); ++g) {
      if (frame_restricted && gt[g].frame != regions.frame_of(i)) continue;
      const double v = iou(regions.box(i), gt[g].box);
      if (v > best) {
        best = v;
        best_g = g;
      }
    }
    if (best_g >= 0) m.best_iou[i] = best;
    if (best_g >= 0 && best > threshold) {
      m.gamma[i] = 1;
      m.matched_class[i] = gt[best_g].class_id;
      m.matched_gt[i] = best_g;
    }
  }
  return m;
}

std::array<double, 5> location_feature(const BoundingBox& box, int frame_index, int num_frames,
                                       double frame_w, double frame_h) {
  if (!(frame_w > 0) || !(frame_h > 0)) throw std::invalid_argument("frame size must be positive");
  auto clamp01 = [](double v) { return std::clamp(v, 0.0, 1.0); };
  return {clamp01(box.x1 / frame_w), clamp01(box.y1 / frame_h), clamp01(box.x2 / frame_w),
          clamp01(box.y2 / frame_h),
          clamp01(num_frames > 0 ? static_cast<double>(frame_index) / num_frames : 0.0)};
}

Matrix location_features(const RegionSet& regions) {
  Matrix out(5, regions.size());
  for (int i = 0; i < regions.size(); ++i) {
    const auto v = location_feature(regions.box(i), regions.frame_of(i), regions.num_frames(),
                                    regions.frame_width(), regions.frame_height());
    for (int r = 0; r < 5; ++r) out(r, i) = v[r];
  }
  return out;
}

// ---- files ----

namespace {

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

std::filesystem::path with_suffix(const std::filesystem::path& stem, const char* suffix) {
  return std::filesystem::path(stem.string() + suffix);
}

std::uint32_t to_le(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    v = ((v & 0xFFu) << 24) | ((v & 0xFF00u) << 8) | ((v >> 8) & 0xFF00u) | (v >> 24);
  }
  return v;
}

}  // namespace

void write_f32(const std::filesystem::path& path, std::span<const double> values) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  std::vector<std::uint32_t> buf(values.size());
  for (std::size_t i = 0; i < values.size(); ++i)
    buf[i] = to_le(std::bit_cast<std::uint32_t>(static_cast<float>(values[i])));
  out.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(std::uint32_t)));
}

std::vector<double> read_f32(const std::filesystem::path& path, std::size_t expected_count) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw DataError("cannot open " + path.string());
  const auto bytes = static_cast<std::size_t>(in.tellg());
  if (bytes != expected_count * sizeof(std::uint32_t))
    throw DataError(path.string() + ": expected " + std::to_string(expected_count) +
                    " float32 values, found " + std::to_string(bytes) + " bytes");
  in.seekg(0);
  std::vector<std::uint32_t> buf(expected_count);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(bytes));
  std::vector<double> out(expected_count);
  for (std::size_t i = 0; i < expected_count; ++i)
    out[i] = static_cast<double>(std::bit_cast<float>(to_le(buf[i])));
  return out;
}

RawRegionFile read_region_file(const std::filesystem::path& stem) {
  const auto meta_path = with_suffix(stem, ".feat.json");
  const json meta = read_json(meta_path);
  RawRegionFile f;
  int n = 0, d = 0;
  std::vector<std::array<double, 4>> boxes;
  std::vector<double> conf;
  try {
    n = meta.at("n").get<int>();
    d = meta.at("d").get<int>();
    f.num_frames = meta.at("f").get<int>();
    f.frames = meta.at("frames").get<std::vector<int>>();
    boxes = meta.at("boxes").get<std::vector<std::array<double, 4>>>();
    conf = meta.at("conf").get<std::vector<double>>();
    f.frame_w = meta.at("frame_w").get<double>();
    f.frame_h = meta.at("frame_h").get<double>();
  } catch (const json::exception& e) {
    throw DataError(meta_path.string() + ": " + e.what());
  }
  if (n < 0 || d < 0 || static_cast<int>(f.frames.size()) != n ||
      static_cast<int>(boxes.size()) != n || static_cast<int>(conf.size()) != n)
    throw DataError(meta_path.string() + ": inconsistent region counts");
  const auto values = read_f32(with_suffix(stem, ".feat"), static_cast<std::size_t>(n) * d);
  f.proposals.resize(n);
  for (int i = 0; i < n; ++i) {
    if (f.frames[i] < 0 || f.frames[i] >= f.num_frames)
      throw DataError(meta_path.string() + ": region frame out of range");
    auto& p = f.proposals[i];
    p.box = {boxes[i][0], boxes[i][1], boxes[i][2], boxes[i][3]};
    if (!p.box.valid()) throw DataError(meta_path.string() + ": degenerate region box");
    p.confidence = conf[i];
    p.feature.assign(values.begin() + static_cast<std::ptrdiff_t>(i) * d,
                     values.begin() + static_cast<std::ptrdiff_t>(i + 1) * d);
  }
  return f;
}

void write_region_file(const std::filesystem::path& stem, const RawRegionFile& file) {
  const int n = static_cast<int>(file.proposals.size());
  const int d = n ? static_cast<int>(file.proposals[0].feature.size()) : 0;
  json meta = json::object();
  meta["n"] = n;
  meta["d"] = d;
  meta["f"] = file.num_frames;
  meta["frames"] = file.frames;
  json boxes = json::array();
  std::vector<double> conf;
  std::vector<double> values;
  values.reserve(static_cast<std::size_t>(n) * d);
  for (const auto& p : file.proposals) {
    boxes.push_back({p.box.x1, p.box.y1, p.box.x2, p.box.y2});
    conf.push_back(p.confidence);
    if (static_cast<int>(p.feature.size()) != d) throw DataError("inconsistent feature dimension");
    values.insert(values.end(), p.feature.begin(), p.feature.end());
  }
  meta["boxes"] = boxes;
  meta["conf"] = conf;
  meta["frame_w"] = file.frame_w;
  meta["frame_h"] = file.frame_h;
  std::ofstream out(with_suffix(stem, ".feat.json"));
  if (!out) throw DataError("cannot write " + stem.string());
  out << meta.dump() << '\n';
  write_f32(with_suffix(stem, ".feat"), values);
}

RegionSet load_region_set(const std::filesystem::path& stem, double conf_threshold, int cap) {
  const RawRegionFile raw = read_region_file(stem);
  std::vector<std::vector<Proposal>> per_frame(raw.num_frames);
  for (std::size_t i = 0; i < raw.proposals.size(); ++i)
    per_frame[raw.frames[i]].push_back(raw.proposals[i]);
  return assemble_region_set(per_frame, raw.frame_w, raw.frame_h, conf_threshold, cap);
}

Matrix read_temporal_file(const std::filesystem::path& stem) {
  const auto meta_path = with_suffix(stem, ".tfeat.json");
  const json meta = read_json(meta_path);
  int f = 0, d = 0;
  try {
    f = meta.at("f").get<int>();
    d = meta.at("d").get<int>();
  } catch (const json::exception& e) {
    throw DataError(meta_path.string() + ": " + e.what());
  }
  if (f < 1 || d < 1) throw DataError(meta_path.string() + ": temporal map needs f >= 1, d >= 1");
  const auto values = read_f32(with_suffix(stem, ".tfeat"), static_cast<std::size_t>(f) * d);
  Matrix out(d, f);
  for (int t = 0; t < f; ++t)
    for (int r = 0; r < d; ++r) out(r, t) = values[static_cast<std::size_t>(t) * d + r];
  return out;
}

void write_temporal_file(const std::filesystem::path& stem, const Matrix& frames) {
  json meta = {{"f", frames.cols}, {"d", frames.rows}};
  std::ofstream out(with_suffix(stem, ".tfeat.json"));
  if (!out) throw DataError("cannot write " + stem.string());
  out << meta.dump() << '\n';
  std::vector<double> values;
  values.reserve(frames.size());
  for (int t = 0; t < frames.cols; ++t)
    for (int r = 0; r < frames.rows; ++r) values.push_back(frames(r, t));
  write_f32(with_suffix(stem, ".tfeat"), values);
}

}  // namespace gvd
