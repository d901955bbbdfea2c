#include <gtest/gtest.h>

#include <functional>

#include "fd.hpp"
#include "gvd/autodiff.hpp"
#include "gvd/rng.hpp"

using namespace gvd;
using gvd::oracle::max_abs_diff;
using gvd::oracle::numeric_grad;

namespace {

using Op = std::function<ad::Var(ad::Tape&, ad::Var, ad::Var)>;

// Scalar probe: sum(w .* op(x, y)) with fixed random w, so every output entry matters.
void check_op(const char* name, Matrix x, Matrix y, const Op& op, double tol = 1e-6) {
  Rng rng(11);
  Matrix w;
  auto run = [&](bool record, Matrix* gx, Matrix* gy) {
    ad::Tape tape(record);
    ad::Var vx = tape.param(x), vy = tape.param(y);
    ad::Var out = op(tape, vx, vy);
    if (w.empty()) {
      w = Matrix(out.rows(), out.cols());
      fill_normal(w, rng, 1.0);
    }
    ad::Var s = ad::sum(ad::mul(out, tape.constant(w)));
    if (record) {
      tape.backward(s);
      const Matrix* g1 = tape.grad_of(x);
      const Matrix* g2 = tape.grad_of(y);
      *gx = g1 ? *g1 : Matrix(x.rows, x.cols);
      *gy = g2 ? *g2 : Matrix(y.rows, y.cols);
    }
    return s.scalar();
  };
  Matrix gx, gy;
  run(true, &gx, &gy);
  const Matrix nx = numeric_grad(x, [&] { return run(false, nullptr, nullptr); });
  const Matrix ny = numeric_grad(y, [&] { return run(false, nullptr, nullptr); });
  EXPECT_LT(max_abs_diff(gx, nx), tol) << name << " dx";
  EXPECT_LT(max_abs_diff(gy, ny), tol) << name << " dy";
}

Matrix rnd(int r, int c, std::uint64_t seed, double shift = 0) {
  Rng rng(seed);
  Matrix m(r, c);
  fill_normal(m, rng, 1.0);
  for (double& v : m.data) v += shift;
  return m;
}

}  // namespace

TEST(Autodiff, MatmulAllTransposes) {
  check_op("nn", rnd(3, 4, 1), rnd(4, 2, 2), [](ad::Tape&, ad::Var a, ad::Var b) { return ad::matmul(a, b); });
  check_op("tn", rnd(4, 3, 1), rnd(4, 2, 2),
           [](ad::Tape&, ad::Var a, ad::Var b) { return ad::matmul(a, b, true, false); });
  check_op("nt", rnd(3, 4, 1), rnd(2, 4, 2),
           [](ad::Tape&, ad::Var a, ad::Var b) { return ad::matmul(a, b, false, true); });
  check_op("tt", rnd(4, 3, 1), rnd(2, 4, 2),
           [](ad::Tape&, ad::Var a, ad::Var b) { return ad::matmul(a, b, true, true); });
}

TEST(Autodiff, Elementwise) {
  const Matrix a = rnd(3, 4, 3), b = rnd(3, 4, 4);
  check_op("add", a, b, [](ad::Tape&, ad::Var x, ad::Var y) { return ad::add(x, y); });
  check_op("sub", a, b, [](ad::Tape&, ad::Var x, ad::Var y) { return ad::sub(x, y); });
  check_op("mul", a, b, [](ad::Tape&, ad::Var x, ad::Var y) { return ad::mul(x, y); });
  check_op("affine", a, b, [](ad::Tape&, ad::Var x, ad::Var) { return ad::affine(x, -1.5, 2.0); });
  check_op("tanh", a, b, [](ad::Tape&, ad::Var x, ad::Var y) { return ad::tanh(ad::add(x, y)); });
  check_op("sigmoid", a, b, [](ad::Tape&, ad::Var x, ad::Var) { return ad::sigmoid(x); });
  check_op("relu", a, b, [](ad::Tape&, ad::Var x, ad::Var) { return ad::relu(x); });
  check_op("neg_log", rnd(3, 4, 5, 5.0), b, [](ad::Tape&, ad::Var x, ad::Var) { return ad::neg_log(x); });
  Matrix mask = rnd(3, 4, 6);
  check_op("mul_const", a, b, [mask](ad::Tape&, ad::Var x, ad::Var) { return ad::mul_const(x, mask); });
}

TEST(Autodiff, Broadcasts) {
  check_op("col_bias", rnd(3, 4, 1), rnd(3, 1, 2),
           [](ad::Tape&, ad::Var a, ad::Var b) { return ad::add_col_bias(a, b); });
  check_op("row_bcast", rnd(3, 4, 1), rnd(4, 1, 2),
           [](ad::Tape&, ad::Var a, ad::Var b) { return ad::add_row_broadcast(a, b); });
}

TEST(Autodiff, Softmaxes) {
  check_op("cols", rnd(4, 3, 1), rnd(1, 1, 2), [](ad::Tape&, ad::Var a, ad::Var) { return ad::softmax_cols(a); });
  check_op("rows", rnd(4, 3, 1), rnd(1, 1, 2), [](ad::Tape&, ad::Var a, ad::Var) { return ad::softmax_rows(a); });
}

TEST(Autodiff, Structural) {
  check_op("concat_rows", rnd(2, 3, 1), rnd(4, 3, 2), [](ad::Tape&, ad::Var a, ad::Var b) {
    const ad::Var parts[] = {a, b, a};
    return ad::concat_rows(parts);
  });
  check_op("concat_cols", rnd(3, 2, 1), rnd(3, 1, 2), [](ad::Tape&, ad::Var a, ad::Var b) {
    const ad::Var parts[] = {b, a};
    return ad::concat_cols(parts);
  });
  check_op("slice", rnd(5, 2, 1), rnd(1, 1, 2), [](ad::Tape&, ad::Var a, ad::Var) { return ad::slice_rows(a, 1, 3); });
  check_op("gather", rnd(3, 4, 1), rnd(1, 1, 2), [](ad::Tape&, ad::Var a, ad::Var) {
    const int idx[] = {3, 0, 3};
    return ad::gather_cols(a, idx);
  });
  check_op("transpose", rnd(3, 4, 1), rnd(1, 1, 2), [](ad::Tape&, ad::Var a, ad::Var) { return ad::transpose(a); });
  check_op("embed", rnd(5, 3, 1), rnd(1, 1, 2), [](ad::Tape&, ad::Var a, ad::Var) { return ad::embed_row(a, 2); });
  check_op("pick", rnd(3, 4, 1), rnd(1, 1, 2), [](ad::Tape&, ad::Var a, ad::Var) { return ad::pick(a, 2, 1); });
  check_op("mean_cols", rnd(3, 4, 1), rnd(1, 1, 2), [](ad::Tape&, ad::Var a, ad::Var) { return ad::mean_cols(a); });
}

TEST(Autodiff, LayerNorm) {
  const Matrix gain = rnd(4, 1, 7, 1.0), bias = rnd(4, 1, 8);
  check_op("ln_x", rnd(4, 3, 1), gain, [bias](ad::Tape& t, ad::Var x, ad::Var g) {
    return ad::layer_norm_cols(x, g, t.constant(bias));
  });
  check_op("ln_b", rnd(4, 3, 1), bias, [gain](ad::Tape& t, ad::Var x, ad::Var b) {
    return ad::layer_norm_cols(x, t.constant(gain), b);
  });
}

TEST(Autodiff, ReusedParamAccumulates) {
  Matrix x = rnd(2, 2, 3);
  ad::Tape tape;
  ad::Var a = tape.param(x), b = tape.param(x);
  EXPECT_EQ(a.id, b.id);
  tape.backward(ad::sum(ad::mul(a, b)));
  const Matrix* g = tape.grad_of(x);
  ASSERT_NE(g, nullptr);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_DOUBLE_EQ(g->data[i], 2 * x.data[i]);
}

TEST(Autodiff, NegLogClampCountsAndZeroGrad) {
  Matrix x = Matrix::column({0.0, 0.5});
  ad::Tape tape;
  ad::Var v = tape.param(x);
  tape.backward(ad::sum(ad::neg_log(v)));
  EXPECT_EQ(tape.clamp_count(), 1);
  EXPECT_EQ(tape.grad_of(x)->data[0], 0.0);
  EXPECT_DOUBLE_EQ(tape.grad_of(x)->data[1], -2.0);
}

TEST(Autodiff, NegLogPropagatesNan) {
  Matrix x = Matrix::column({std::nan(""), 0.5});
  ad::Tape tape;
  ad::Var v = tape.param(x);
  const ad::Var y = ad::sum(ad::neg_log(v));
  EXPECT_TRUE(std::isnan(y.scalar()));
  EXPECT_EQ(tape.clamp_count(), 0);
}

TEST(Autodiff, NonRecordingTapeMatchesValues) {
  const Matrix a = rnd(3, 3, 1);
  ad::Tape on(true), off(false);
  const double v1 = ad::sum(ad::tanh(ad::matmul(on.input(a), on.input(a)))).scalar();
  const double v2 = ad::sum(ad::tanh(ad::matmul(off.input(a), off.input(a)))).scalar();
  EXPECT_EQ(v1, v2);
}
