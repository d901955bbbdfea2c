#include "gvd/attention.hpp"

#include <stdexcept>

namespace gvd {

std::array<double, 4> segment_position(const SegmentMeta& meta) {
  if (!(meta.duration_s > 0)) throw std::invalid_argument("segment duration must be positive");
  if (meta.total_segments < 1) throw std::invalid_argument("total_segments must be >= 1");
  const double n = meta.total_segments;
  return {meta.segment_index / n, 1.0 / n, meta.start_s / meta.duration_s,
          meta.end_s / meta.duration_s};
}

namespace attention {

ad::Var project(ad::Var encoded, const RegionAttentionParams& p) {
  return ad::matmul(encoded.tape->param(p.w_r), encoded);
}

ad::Var weights(ad::Var projected, ad::Var h, const RegionAttentionParams& p) {
  ad::Tape& t = *projected.tape;
  if (projected.cols() < 1) throw std::invalid_argument("region attention over zero regions");
  ad::Var hidden = ad::tanh(ad::add_col_bias(projected, ad::matmul(t.param(p.w_h), h)));
  ad::Var logits = ad::matmul(hidden, t.param(p.w_alpha), true, false);  // N x 1
  return ad::softmax_cols(logits);
}

ad::Var loss(ad::Var alpha, std::span<const std::uint8_t> gamma) {
  ad::Tape& t = *alpha.tape;
  if (static_cast<int>(gamma.size()) != alpha.rows())
    throw std::invalid_argument("attention loss: gamma length must match alpha");
  std::vector<ad::Var> terms;
  for (int i = 0; i < alpha.rows(); ++i)
    if (gamma[i]) terms.push_back(ad::pick(alpha, i, 0));
  if (terms.empty()) return t.constant(Matrix(1, 1, 0.0));
  return ad::sum(ad::neg_log(ad::concat_rows(terms)));
}

ad::Var bigru_encode(ad::Var frames, const TemporalParams& p) {
  ad::Tape& t = *frames.tape;
  const int n = frames.cols();
  if (n < 1) throw std::invalid_argument("temporal features need at least one frame");
  std::vector<ad::Var> fwd(n), bwd(n);
  ad::Var h = t.constant(Matrix(p.forward.hidden(), 1, 0.0));
  for (int f = 0; f < n; ++f) fwd[f] = h = gru_step(p.forward, ad::column(frames, f), h);
  h = t.constant(Matrix(p.backward.hidden(), 1, 0.0));
  for (int f = n - 1; f >= 0; --f) bwd[f] = h = gru_step(p.backward, ad::column(frames, f), h);
  std::vector<ad::Var> cols(n);
  for (int f = 0; f < n; ++f) {
    const ad::Var both[] = {fwd[f], bwd[f]};
    cols[f] = ad::concat_rows(both);
  }
  return linear(ad::concat_cols(cols), p.w_proj, p.b_proj);
}

ad::Var global_feature(ad::Var frames, const SegmentMeta& meta, const TemporalParams& p) {
  const auto pos = segment_position(meta);
  const ad::Var parts[] = {ad::mean_cols(frames),
                           frames.tape->constant(Matrix::column(std::span<const double>(pos)))};
  return linear(ad::concat_rows(parts), p.w_global, p.b_global);
}

}  // namespace attention

AttentionResult region_attention(const Matrix& encoded, std::span<const double> h,
                                 const RegionAttentionParams& p) {
  ad::Tape t(false);
  ad::Var enc = t.input(encoded);
  ad::Var a = attention::weights(attention::project(enc, p), t.input(Matrix::column(h)), p);
  return {a.value().data, ad::matmul(enc, a).value().data};
}

double attention_loss(std::span<const double> alpha, std::span<const std::uint8_t> gamma) {
  ad::Tape t(false);
  return attention::loss(t.input(Matrix::column(alpha)), gamma).scalar();
}

AttentionResult temporal_context(const Matrix& frames, std::span<const double> h,
                                 const TemporalParams& p) {
  ad::Tape t(false);
  ad::Var enc = attention::bigru_encode(t.input(frames), p);
  ad::Var a = attention::weights(attention::project(enc, p.attend), t.input(Matrix::column(h)),
                                 p.attend);
  return {a.value().data, ad::matmul(enc, a).value().data};
}

std::vector<double> global_feature(const Matrix& frames, const SegmentMeta& meta,
                                   const TemporalParams& p) {
  ad::Tape t(false);
  return attention::global_feature(t.input(frames), meta, p).value().data;
}

}  // namespace gvd
