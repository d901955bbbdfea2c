#include "gvd/nn.hpp"

namespace gvd {

ad::Var Dropout::apply(ad::Var x, double rate) const {
  if (!active() || rate <= 0.0) return x;
  Matrix mask(x.rows(), x.cols());
  const double keep = 1.0 - rate;
  for (double& v : mask.data) v = uniform01(*rng) < keep ? 1.0 / keep : 0.0;
  return ad::mul_const(x, mask);
}

ad::Var linear(ad::Var x, const Matrix& w, const Matrix& b) {
  ad::Tape& t = *x.tape;
  return ad::add_col_bias(ad::matmul(t.param(w), x), t.param(b));
}

LstmState lstm_step(const LstmParams& p, ad::Var x, const LstmState& prev) {
  ad::Tape& t = *x.tape;
  const int h = p.hidden();
  ad::Var gates = ad::add_col_bias(
      ad::add(ad::matmul(t.param(p.w), x), ad::matmul(t.param(p.u), prev.h)), t.param(p.b));
  ad::Var i = ad::sigmoid(ad::slice_rows(gates, 0, h));
  ad::Var f = ad::sigmoid(ad::slice_rows(gates, h, h));
  ad::Var g = ad::tanh(ad::slice_rows(gates, 2 * h, h));
  ad::Var o = ad::sigmoid(ad::slice_rows(gates, 3 * h, h));
  ad::Var c = ad::add(ad::mul(f, prev.c), ad::mul(i, g));
  return {ad::mul(o, ad::tanh(c)), c};
}

ad::Var gru_step(const GruParams& p, ad::Var x, ad::Var h) {
  ad::Tape& t = *x.tape;
  const int n = p.hidden();
  ad::Var wx = ad::add_col_bias(ad::matmul(t.param(p.w), x), t.param(p.bw));
  ad::Var uh = ad::add_col_bias(ad::matmul(t.param(p.u), h), t.param(p.bu));
  ad::Var r = ad::sigmoid(ad::add(ad::slice_rows(wx, 0, n), ad::slice_rows(uh, 0, n)));
  ad::Var z = ad::sigmoid(ad::add(ad::slice_rows(wx, n, n), ad::slice_rows(uh, n, n)));
  ad::Var cand = ad::tanh(ad::add(ad::slice_rows(wx, 2 * n, n), ad::mul(r, ad::slice_rows(uh, 2 * n, n))));
  // h' = (1 - z) * cand + z * h
  return ad::add(ad::mul(ad::affine(z, -1.0, 1.0), cand), ad::mul(z, h));
}

}  // namespace gvd
