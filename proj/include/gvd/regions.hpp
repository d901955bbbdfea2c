#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include "gvd/matrix.hpp"

namespace gvd {

// Axis-aligned box in continuous pixel coordinates (no +1 convention).
struct BoundingBox {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  bool valid() const { return x2 > x1 && y2 > y1; }
  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

// Intersection over union. Throws std::invalid_argument on a degenerate box.
double iou(const BoundingBox& a, const BoundingBox& b);

struct Proposal {
  BoundingBox box;
  double confidence = 0;
  std::vector<double> feature;
};

// One region, materialized from a RegionSet.
struct Region {
  BoundingBox box;
  int frame_index = 0;
  double confidence = 0;
  std::vector<double> feature;
};

// Proposal regions across F sampled frames, flattened frame-major.
class RegionSet {
 public:
  RegionSet() = default;
  RegionSet(int num_frames, int feature_dim, double frame_w, double frame_h)
      : num_frames_(num_frames), frame_w_(frame_w), frame_h_(frame_h),
        features_(feature_dim, 0), per_frame_(num_frames) {}

  int num_frames() const { return num_frames_; }
  int size() const { return static_cast<int>(boxes_.size()); }
  int feature_dim() const { return features_.rows; }
  double frame_width() const { return frame_w_; }
  double frame_height() const { return frame_h_; }

  // d x N, one column per region.
  const Matrix& features() const { return features_; }
  const BoundingBox& box(int i) const { return boxes_[i]; }
  int frame_of(int i) const { return frames_[i]; }
  double confidence(int i) const { return conf_[i]; }
  // Flattened indices of the regions on frame f, in order.
  std::span<const int> frame_regions(int f) const { return per_frame_[f]; }
  // (frame, local index) of flattened region i.
  std::pair<int, int> local_index(int i) const;
  int flat_index(int frame, int local) const { return per_frame_[frame][local]; }
  Region region(int i) const;

  // Builds a set from regions already ordered frame-major (non-decreasing
  // frame_index). Every feature must have length feature_dim.
  static RegionSet from_regions(int num_frames, int feature_dim, double frame_w, double frame_h,
                                std::span<const Region> regions);

 private:
  int num_frames_ = 0;
  double frame_w_ = 1, frame_h_ = 1;
  Matrix features_;
  std::vector<BoundingBox> boxes_;
  std::vector<int> frames_;
  std::vector<double> conf_;
  std::vector<std::vector<int>> per_frame_;
};

// Drops proposals at or below `conf_threshold`, keeps the top `cap` per frame
// by confidence (stable), and flattens frame-major.
RegionSet assemble_region_set(const std::vector<std::vector<Proposal>>& per_frame,
                              double frame_w, double frame_h, double conf_threshold = 0.2,
                              int cap = 100);

struct GroundTruthBox {
  BoundingBox box;
  int class_id = -1;
  int frame = 0;
};

struct PositiveMatch {
  std::vector<std::uint8_t> gamma;  // length N
  std::vector<int> matched_class;   // -1 where gamma is 0
  std::vector<int> matched_gt;      // index into the gt list, -1 where gamma is 0
  std::vector<double> best_iou;

  int positives() const;
  std::vector<int> positive_indices() const;
};

// gamma_i = 1 iff IoU(region_i, some gt box) > threshold (strict). With
// frame_restricted, only gt boxes on region_i's frame are considered. The
// largest-IoU gt box decides the class; ties go to the lowest gt index.
PositiveMatch match_positives(const RegionSet& regions, std::span<const GroundTruthBox> gt,
                              double threshold = 0.5, bool frame_restricted = true);

// (x1/w, y1/h, x2/w, y2/h, frame/F), clamped to [0, 1].
std::array<double, 5> location_feature(const BoundingBox& box, int frame_index, int num_frames,
                                       double frame_w, double frame_h);
// 5 x N matrix of location features for every region.
Matrix location_features(const RegionSet& regions);

// ---- feature files ----
// Region features: <stem>.feat.json sidecar + <stem>.feat (N x d float32 LE).
// Temporal features: <stem>.tfeat.json sidecar + <stem>.tfeat (F_t x d_t float32 LE).

struct RawRegionFile {
  int num_frames = 0;
  double frame_w = 0, frame_h = 0;
  std::vector<int> frames;
  std::vector<Proposal> proposals;
};

RawRegionFile read_region_file(const std::filesystem::path& stem);
void write_region_file(const std::filesystem::path& stem, const RawRegionFile& file);
RegionSet load_region_set(const std::filesystem::path& stem, double conf_threshold = 0.2,
                          int cap = 100);

// Returns d_t x F_t (one column per frame).
Matrix read_temporal_file(const std::filesystem::path& stem);
// `frames` is d_t x F_t.
void write_temporal_file(const std::filesystem::path& stem, const Matrix& frames);

// Raw little-endian float32 rows.
void write_f32(const std::filesystem::path& path, std::span<const double> values);
std::vector<double> read_f32(const std::filesystem::path& path, std::size_t expected_count);

}  // namespace gvd
