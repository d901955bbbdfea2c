#include "gvd/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "gvd/kernels.hpp"

namespace gvd::ad {

using kernels::Trans;

const Matrix& Var::value() const { return tape->value(id); }

double Var::scalar() const {
  const Matrix& m = value();
  if (m.size() != 1) throw std::logic_error("Var::scalar on non-scalar node");
  return m.data[0];
}

Var Tape::push(Matrix value, bool requires_grad, Backward back) {
  Node n;
  n.own = std::move(value);
  n.requires_grad = requires_grad && record_;
  if (n.requires_grad) n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::constant(Matrix m) { return push(std::move(m), false, nullptr); }

Var Tape::input(const Matrix& m, bool requires_grad) {
  Node n;
  n.ext = &m;
  n.requires_grad = requires_grad && record_;
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::param(const Matrix& m) {
  auto it = params_.find(&m);
  if (it != params_.end()) return Var{this, it->second};
  Var v = input(m, true);
  params_.emplace(&m, v.id);
  return v;
}

const Matrix& Tape::value(int id) const {
  const Node& n = nodes_[id];
  return n.ext ? *n.ext : n.own;
}

Matrix& Tape::grad_ref(int id) {
  Node& n = nodes_[id];
  if (!n.has_grad) {
    const Matrix& v = value(id);
    n.grad = Matrix(v.rows, v.cols);
    n.has_grad = true;
  }
  return n.grad;
}

const Matrix* Tape::grad(Var v) const {
  const Node& n = nodes_[v.id];
  return n.has_grad ? &n.grad : nullptr;
}

const Matrix* Tape::grad_of(const Matrix& param) const {
  auto it = params_.find(&param);
  if (it == params_.end()) return nullptr;
  return grad(Var{const_cast<Tape*>(this), it->second});
}

void Tape::backward(Var root) {
  if (!record_) throw std::logic_error("backward on a non-recording tape");
  if (value(root.id).size() != 1) throw std::logic_error("backward root must be 1 x 1");
  for (auto& n : nodes_) {
    if (n.has_grad) std::fill(n.grad.data.begin(), n.grad.data.end(), 0.0);
  }
  if (!nodes_[root.id].requires_grad) return;
  grad_ref(root.id).data[0] = 1.0;
  for (int id = root.id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.has_grad || !n.back) continue;
    n.back(*this, id);
  }
}

// ---- operations ----

namespace {

void check(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(std::string("autodiff: ") + what);
}

bool rg(Var v) { return v.tape->requires_grad(v.id); }

Tape& same_tape(Var a, Var b) {
  check(a.tape == b.tape, "operands on different tapes");
  return *a.tape;
}

}  // namespace

Var matmul(Var a, Var b, bool trans_a, bool trans_b) {
  Tape& t = same_tape(a, b);
  const Matrix& A = a.value();
  const Matrix& B = b.value();
  const int m = trans_a ? A.cols : A.rows;
  const int k = trans_a ? A.rows : A.cols;
  const int kb = trans_b ? B.cols : B.rows;
  const int n = trans_b ? B.rows : B.cols;
  check(k == kb, "matmul inner dimension mismatch");
  Matrix C(m, n);
  kernels::gemm(trans_a ? Trans::kYes : Trans::kNo, trans_b ? Trans::kYes : Trans::kNo, m, n, k,
                1.0, A.span(), B.span(), 0.0, C.span());
  const int ia = a.id, ib = b.id;
  return t.push(std::move(C), rg(a) || rg(b), [=](Tape& tp, int self) {
    const Matrix& G = tp.grad_ref(self);
    const Matrix& Av = tp.value(ia);
    const Matrix& Bv = tp.value(ib);
    if (tp.requires_grad(ia)) {
      Matrix& GA = tp.grad_ref(ia);
      if (!trans_a) {
        // dA (m x k) += G (m x n) * op(B)^T
        kernels::gemm(Trans::kNo, trans_b ? Trans::kNo : Trans::kYes, m, k, n, 1.0, G.span(),
                      Bv.span(), 1.0, GA.span());
      } else {
        // dA (k x m) += op(B) * G^T
        kernels::gemm(trans_b ? Trans::kYes : Trans::kNo, Trans::kYes, k, m, n, 1.0, Bv.span(),
                      G.span(), 1.0, GA.span());
      }
    }
    if (tp.requires_grad(ib)) {
      Matrix& GB = tp.grad_ref(ib);
      if (!trans_b) {
        // dB (k x n) += op(A)^T * G
        kernels::gemm(trans_a ? Trans::kNo : Trans::kYes, Trans::kNo, k, n, m, 1.0, Av.span(),
                      G.span(), 1.0, GB.span());
      } else {
        // dB (n x k) += G^T * op(A)
        kernels::gemm(Trans::kYes, trans_a ? Trans::kYes : Trans::kNo, n, k, m, 1.0, G.span(),
                      Av.span(), 1.0, GB.span());
      }
    }
  });
}

Var add(Var a, Var b) {
  Tape& t = same_tape(a, b);
  check(a.value().same_shape(b.value()), "add shape mismatch");
  Matrix C = a.value();
  const auto& bv = b.value().data;
  for (std::size_t i = 0; i < C.size(); ++i) C.data[i] += bv[i];
  const int ia = a.id, ib = b.id;
  return t.push(std::move(C), rg(a) || rg(b), [=](Tape& tp, int self) {
    const Matrix& G = tp.grad_ref(self);
    for (int id : {ia, ib}) {
      if (!tp.requires_grad(id)) continue;
      auto& g = tp.grad_ref(id).data;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += G.data[i];
    }
  });
}

Var sub(Var a, Var b) { return add(a, scale(b, -1.0)); }

Var add_col_bias(Var a, Var bias) {
  Tape& t = same_tape(a, bias);
  const Matrix& A = a.value();
  const Matrix& B = bias.value();
  check(B.cols == 1 && B.rows == A.rows, "add_col_bias shape mismatch");
  Matrix C = A;
  for (int r = 0; r < A.rows; ++r)
    for (int c = 0; c < A.cols; ++c) C(r, c) += B.data[r];
  const int ia = a.id, ib = bias.id;
  return t.push(std::move(C), rg(a) || rg(bias), [=](Tape& tp, int self) {
    const Matrix& G = tp.grad_ref(self);
    if (tp.requires_grad(ia)) {
      auto& g = tp.grad_ref(ia).data;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += G.data[i];
    }
    if (tp.requires_grad(ib)) {
      auto& g = tp.grad_ref(ib).data;
      for (int r = 0; r < G.rows; ++r)
        for (int c = 0; c < G.cols; ++c) g[r] += G(r, c);
    }
  });
}

Var add_row_broadcast(Var a, Var v) {
  Tape& t = same_tape(a, v);
  const Matrix& A = a.value();
  const Matrix& V = v.value();
  check(V.cols == 1 && V.rows == A.cols, "add_row_broadcast shape mismatch");
  Matrix C = A;
  for (int r = 0; r < A.rows; ++r)
    for (int c = 0; c < A.cols; ++c) C(r, c) += V.data[c];
  const int ia = a.id, iv = v.id;
  return t.push(std::move(C), rg(a) || rg(v), [=](Tape& tp, int self) {
    const Matrix& G = tp.grad_ref(self);
    if (tp.requires_grad(ia)) {
      auto& g = tp.grad_ref(ia).data;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += G.data[i];
    }
    if (tp.requires_grad(iv)) {
      auto& g = tp.grad_ref(iv).data;
      for (int r = 0; r < G.rows; ++r)
        for (int c = 0; c < G.cols; ++c) g[c] += G(r, c);
    }
  });
}

Var affine(Var a, double s, double c) {
  Matrix C = a.value();
  for (double& x : C.data) x = s * x + c;
  const int ia = a.id;
  return a.tape->push(std::move(C), rg(a), [=](Tape& tp, int self) {
    const Matrix& G = tp.grad_ref(self);
    auto& g = tp.grad_ref(ia).data;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * G.data[i];
  });
}

Var mul(Var a, Var b) {
  Tape& t = same_tape(a, b);
  check(a.value().same_shape(b.value()), "mul shape mismatch");
  Matrix C = a.value();
  const auto& bv = b.value().data;
  for (std::size_t i = 0; i < C.size(); ++i) C.data[i] *= bv[i];
  const int ia = a.id, ib = b.id;
  return t.push(std::move(C), rg(a) || rg(b), [=](Tape& tp, int self) {
    const Matrix& G = tp.grad_ref(self);
    if (tp.requires_grad(ia)) {
      auto& g = tp.grad_ref(ia).data;
      const auto& o = tp.value(ib).data;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += G.data[i] * o[i];
    }
    if (tp.requires_grad(ib)) {
      auto& g = tp.grad_ref(ib).data;
      const auto& o = tp.value(ia).data;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += G.data[i] * o[i];
    }
  });
}

Var mul_const(Var a, const Matrix& mask) {
  check(a.value().same_shape(mask), "mul_const shape mismatch");
  Matrix C = a.value();
  for (std::size_t i = 0; i < C.size(); ++i) C.data[i] *= mask.data[i];
  const int ia = a.id;
  return a.tape->push(std::move(C), rg(a), [=, m = mask](Tape& tp, int self) {
    const Matrix& G = tp.grad_ref(self);
    auto& g = tp.grad_ref(ia).data;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += G.data[i] * m.data[i];
  });
}

namespace {

// Elementwise op whose derivative is expressed through input x and output y.
template <typename F, typename D>
Var unary(Var a, F f, D d) {
  Matrix C = a.value();
  for (double& x : C.data) x = f(x);
  const int ia = a.id;
  return a.tape->push(std::move(C), rg(a), [=](Tape& tp, int self) {
    const Matrix& G = tp.grad_ref(self);
    const auto& x = tp.value(ia).data;
    const auto& y = tp.value(self).data;
    auto& g = tp.grad_ref(ia).data;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += G.data[i] * d(x[i], y[i]);
  });
}

}  // namespace

Var relu(Var a) {
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; },
               [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var tanh(Var a) {
  return unary(a, [](double x) { return std::tanh(x); },
               [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(Var a) {
  return unary(a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
               [](double, double y) { return y * (1.0 - y); });
}

Var softmax_cols(Var a) {
  Matrix C = a.value();
  kernels::softmax_columns(C.rows, C.cols, C.span());
  const int ia = a.id;
  return a.tape->push(std::move(C), rg(a), [=](Tape& tp, int self) {
    const Matrix& G = tp.grad_ref(self);
    const Matrix& Y = tp.value(self);
    Matrix& GA = tp.grad_ref(ia);
    for (int c = 0; c < Y.cols; ++c) {
      double dot = 0.0;
      for (int r = 0; r < Y.rows; ++r) dot += Y(r, c) * G(r, c);
      for (int r = 0; r < Y.rows; ++r) GA(r, c) += Y(r, c) * (G(r, c) - dot);
    }
  });
}

Var softmax_rows(Var a) {
  Matrix C = a.value();
  kernels::softmax_rows(C.rows, C.cols, C.span());
  const int ia = a.id;
  return a.tape->push(std::move(C), rg(a), [=](Tape& tp, int self) {
    const Matrix& G = tp.grad_ref(self);
    const Matrix& Y = tp.value(self);
    Matrix& GA = tp.grad_ref(ia);
    for (int r = 0; r < Y.rows; ++r) {
      double dot = 0.0;
      for (int c = 0; c < Y.cols; ++c) dot += Y(r, c) * G(r, c);
      for (int c = 0; c < Y.cols; ++c) GA(r, c) += Y(r, c) * (G(r, c) - dot);
    }
  });
}

Var neg_log(Var a, double eps) {
  Matrix C = a.value();
  int clamped = 0;
  for (double& x : C.data) {
    if (std::isnan(x)) continue;  // let the caller see it
    if (!(x > eps)) {
      ++clamped;
      x = -std::log(eps);
    } else {
      x = -std::log(x);
    }
  }
  a.tape->note_clamp(clamped);
  const int ia = a.id;
  return a.tape->push(std::move(C), rg(a), [=](Tape& tp, int self) {
    const Matrix& G = tp.grad_ref(self);
    const auto& x = tp.value(ia).data;
    auto& g = tp.grad_ref(ia).data;
    for (std::size_t i = 0; i < g.size(); ++i)
      if (x[i] > eps || std::isnan(x[i])) g[i] -= G.data[i] / x[i];
  });
}

Var pick(Var a, int r, int c) {
  const Matrix& A = a.value();
  check(r >= 0 && r < A.rows && c >= 0 && c < A.cols, "pick out of range");
  Matrix C(1, 1, A(r, c));
  const int ia = a.id;
  return a.tape->push(std::move(C), rg(a), [=](Tape& tp, int self) {
    tp.grad_ref(ia)(r, c) += tp.grad_ref(self).data[0];
  });
}

Var sum(Var a) {
  double s = 0.0;
  for (double x : a.value().data) s += x;
  const int ia = a.id;
  return a.tape->push(Matrix(1, 1, s), rg(a), [=](Tape& tp, int self) {
    const double g0 = tp.grad_ref(self).data[0];
    for (double& g : tp.grad_ref(ia).data) g += g0;
  });
}

Var mean_cols(Var a) {
  const Matrix& A = a.value();
  check(A.cols > 0, "mean_cols of empty matrix");
  Matrix C(A.rows, 1);
  for (int r = 0; r < A.rows; ++r) {
    double s = 0.0;
    for (int c = 0; c < A.cols; ++c) s += A(r, c);
    C.data[r] = s / A.cols;
  }
  const int ia = a.id;
  const int n = A.cols;
  return a.tape->push(std::move(C), rg(a), [=](Tape& tp, int self) {
    const Matrix& G = tp.grad_ref(self);
    Matrix& GA = tp.grad_ref(ia);
    for (int r = 0; r < GA.rows; ++r)
      for (int c = 0; c < n; ++c) GA(r, c) += G.data[r] / n;
  });
}

Var concat_rows(std::span<const Var> parts) {
  check(!parts.empty(), "concat_rows of nothing");
  Tape& t = *parts[0].tape;
  const int cols = parts[0].cols();
  int rows = 0;
  bool req = false;
  std::vector<int> ids;
  for (const Var& p : parts) {
    check(p.tape == &t && p.cols() == cols, "concat_rows shape mismatch");
    rows += p.rows();
    req = req || rg(p);
    ids.push_back(p.id);
  }
  Matrix C(rows, cols);
  std::size_t off = 0;
  for (const Var& p : parts) {
    const auto& d = p.value().data;
    std::copy(d.begin(), d.end(), C.data.begin() + static_cast<std::ptrdiff_t>(off));
    off += d.size();
  }
  return t.push(std::move(C), req, [ids](Tape& tp, int self) {
    const Matrix& G = tp.grad_ref(self);
    std::size_t o = 0;
    for (int id : ids) {
      const std::size_t n = tp.value(id).size();
      if (tp.requires_grad(id)) {
        auto& g = tp.grad_ref(id).data;
        for (std::size_t i = 0; i < n; ++i) g[i] += G.data[o + i];
      }
      o += n;
    }
  });
}

Var concat_cols(std::span<const Var> parts) {
  check(!parts.empty(), "concat_cols of nothing");
  Tape& t = *parts[0].tape;
  const int rows = parts[0].rows();
  int cols = 0;
  bool req = false;
  std::vector<int> ids;
  for (const Var& p : parts) {
    check(p.tape == &t && p.rows() == rows, "concat_cols shape mismatch");
    cols += p.cols();
    req = req || rg(p);
    ids.push_back(p.id);
  }
  Matrix C(rows, cols);
  int c0 = 0;
  for (const Var& p : parts) {
    const Matrix& P = p.value();
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < P.cols; ++c) C(r, c0 + c) = P(r, c);
    c0 += P.cols;
  }
  return t.push(std::move(C), req, [ids](Tape& tp, int self) {
    const Matrix& G = tp.grad_ref(self);
    int c0 = 0;
    for (int id : ids) {
      const int pc = tp.value(id).cols;
      if (tp.requires_grad(id)) {
        Matrix& GP = tp.grad_ref(id);
        for (int r = 0; r < GP.rows; ++r)
          for (int c = 0; c < pc; ++c) GP(r, c) += G(r, c0 + c);
      }
      c0 += pc;
    }
  });
}

Var slice_rows(Var a, int r0, int n) {
  const Matrix& A = a.value();
  check(r0 >= 0 && n >= 0 && r0 + n <= A.rows, "slice_rows out of range");
  Matrix C(n, A.cols);
  std::copy(A.data.begin() + static_cast<std::ptrdiff_t>(r0) * A.cols,
            A.data.begin() + static_cast<std::ptrdiff_t>(r0 + n) * A.cols, C.data.begin());
  const int ia = a.id;
  return a.tape->push(std::move(C), rg(a), [=](Tape& tp, int self) {
    const Matrix& G = tp.grad_ref(self);
    auto& g = tp.grad_ref(ia).data;
    const std::size_t off = static_cast<std::size_t>(r0) * G.cols;
    for (std::size_t i = 0; i < G.size(); ++i) g[off + i] += G.data[i];
  });
}

Var gather_cols(Var a, std::span<const int> idx) {
  const Matrix& A = a.value();
  Matrix C(A.rows, static_cast<int>(idx.size()));
  for (std::size_t j = 0; j < idx.size(); ++j) {
    check(idx[j] >= 0 && idx[j] < A.cols, "gather_cols index out of range");
    for (int r = 0; r < A.rows; ++r) C(r, static_cast<int>(j)) = A(r, idx[j]);
  }
  const int ia = a.id;
  std::vector<int> ix(idx.begin(), idx.end());
  return a.tape->push(std::move(C), rg(a), [=](Tape& tp, int self) {
    const Matrix& G = tp.grad_ref(self);
    Matrix& GA = tp.grad_ref(ia);
    for (std::size_t j = 0; j < ix.size(); ++j)
      for (int r = 0; r < G.rows; ++r) GA(r, ix[j]) += G(r, static_cast<int>(j));
  });
}

Var transpose(Var a) {
  const Matrix& A = a.value();
  Matrix C(A.cols, A.rows);
  for (int r = 0; r < A.rows; ++r)
    for (int c = 0; c < A.cols; ++c) C(c, r) = A(r, c);
  const int ia = a.id;
  return a.tape->push(std::move(C), rg(a), [=](Tape& tp, int self) {
    const Matrix& G = tp.grad_ref(self);
    Matrix& GA = tp.grad_ref(ia);
    for (int r = 0; r < GA.rows; ++r)
      for (int c = 0; c < GA.cols; ++c) GA(r, c) += G(c, r);
  });
}

Var embed_row(Var table, int r) {
  const Matrix& T = table.value();
  check(r >= 0 && r < T.rows, "embed_row index out of range");
  Matrix C = Matrix::column(T.row(r));
  const int it = table.id;
  return table.tape->push(std::move(C), rg(table), [=](Tape& tp, int self) {
    const Matrix& G = tp.grad_ref(self);
    Matrix& GT = tp.grad_ref(it);
    for (int c = 0; c < GT.cols; ++c) GT(r, c) += G.data[c];
  });
}

Var layer_norm_cols(Var x, Var gain, Var bias, double eps) {
  Tape& t = same_tape(x, gain);
  const Matrix& X = x.value();
  const Matrix& Gn = gain.value();
  const Matrix& Bn = bias.value();
  check(Gn.rows == X.rows && Gn.cols == 1 && Bn.rows == X.rows && Bn.cols == 1,
        "layer_norm_cols shape mismatch");
  const int rows = X.rows, cols = X.cols;
  Matrix xhat(rows, cols);
  std::vector<double> inv_std(cols);
  Matrix Y(rows, cols);
  for (int c = 0; c < cols; ++c) {
    double mu = 0.0;
    for (int r = 0; r < rows; ++r) mu += X(r, c);
    mu /= rows;
    double var = 0.0;
    for (int r = 0; r < rows; ++r) var += (X(r, c) - mu) * (X(r, c) - mu);
    var /= rows;
    inv_std[c] = 1.0 / std::sqrt(var + eps);
    for (int r = 0; r < rows; ++r) {
      xhat(r, c) = (X(r, c) - mu) * inv_std[c];
      Y(r, c) = Gn.data[r] * xhat(r, c) + Bn.data[r];
    }
  }
  const int ix = x.id, ig = gain.id, ib = bias.id;
  return t.push(std::move(Y), rg(x) || rg(gain) || rg(bias),
                [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& tp, int self) {
                  const Matrix& G = tp.grad_ref(self);
                  const Matrix& gainv = tp.value(ig);
                  if (tp.requires_grad(ig)) {
                    auto& gg = tp.grad_ref(ig).data;
                    for (int r = 0; r < rows; ++r)
                      for (int c = 0; c < cols; ++c) gg[r] += G(r, c) * xhat(r, c);
                  }
                  if (tp.requires_grad(ib)) {
                    auto& gb = tp.grad_ref(ib).data;
                    for (int r = 0; r < rows; ++r)
                      for (int c = 0; c < cols; ++c) gb[r] += G(r, c);
                  }
                  if (tp.requires_grad(ix)) {
                    Matrix& GX = tp.grad_ref(ix);
                    for (int c = 0; c < cols; ++c) {
                      double mean_d = 0.0, mean_dx = 0.0;
                      for (int r = 0; r < rows; ++r) {
                        const double d = G(r, c) * gainv.data[r];
                        mean_d += d;
                        mean_dx += d * xhat(r, c);
                      }
                      mean_d /= rows;
                      mean_dx /= rows;
                      for (int r = 0; r < rows; ++r) {
                        const double d = G(r, c) * gainv.data[r];
                        GX(r, c) += inv_std[c] * (d - mean_d - xhat(r, c) * mean_dx);
                      }
                    }
                  }
                });
}

}  // namespace gvd::ad
