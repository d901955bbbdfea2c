#pragma once

// Additive region attention, its supervision loss, and temporal attention over
// Bi-GRU encoded frame features.

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "gvd/autodiff.hpp"
#include "gvd/nn.hpp"

namespace gvd {

struct RegionAttentionParams {
  Matrix w_r;      // m x m
  Matrix w_h;      // m x m
  Matrix w_alpha;  // m x 1
};

struct TemporalParams {
  GruParams forward, backward;   // hidden m/2 each
  Matrix w_proj, b_proj;         // m x m
  RegionAttentionParams attend;
  Matrix w_global, b_global;     // m x (d_t + 4)
};

struct SegmentMeta {
  int total_segments = 1;
  int segment_index = 0;
  double start_s = 0;
  double end_s = 1;
  double duration_s = 1;
};

// (index/total, 1/total, start/duration, end/duration). Throws
// std::invalid_argument when duration_s <= 0.
std::array<double, 4> segment_position(const SegmentMeta& meta);

namespace attention {

// W_r R' (m x N); hoisted out of the decode loop.
ad::Var project(ad::Var encoded, const RegionAttentionParams& p);
// alpha (N x 1) = softmax_i(w_alpha^T tanh(W_r r_i + W_h h)).
ad::Var weights(ad::Var projected, ad::Var h, const RegionAttentionParams& p);
// -sum_i gamma_i log alpha_i; constant 0 when gamma has no positives.
ad::Var loss(ad::Var alpha, std::span<const std::uint8_t> gamma);

// m x F_t, forward and backward states concatenated then projected.
ad::Var bigru_encode(ad::Var frames, const TemporalParams& p);
ad::Var global_feature(ad::Var frames, const SegmentMeta& meta, const TemporalParams& p);

}  // namespace attention

struct AttentionResult {
  std::vector<double> alpha;
  std::vector<double> context;
};

// Evaluation-mode entry points.
AttentionResult region_attention(const Matrix& encoded, std::span<const double> h,
                                 const RegionAttentionParams& p);
double attention_loss(std::span<const double> alpha, std::span<const std::uint8_t> gamma);
// Encodes `frames` (d_t x F_t) and attends with h.
AttentionResult temporal_context(const Matrix& frames, std::span<const double> h,
                                 const TemporalParams& p);
std::vector<double> global_feature(const Matrix& frames, const SegmentMeta& meta,
                                   const TemporalParams& p);

}  // namespace gvd
