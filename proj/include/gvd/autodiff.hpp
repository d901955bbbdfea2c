#pragma once

// Reverse-mode automatic differentiation over dense matrices.
//
// A Tape records every operation eagerly: values are computed when the op is
// created, and a backward closure is stored when the tape is recording.
// Parameters are registered by address so that their gradients can be read
// back after backward(). Not thread-safe; use one tape per thread.

#include <deque>
#include <functional>
#include <span>
#include <unordered_map>
#include <vector>

#include "gvd/matrix.hpp"

namespace gvd::ad {

class Tape;

struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Matrix& value() const;
  int rows() const { return value().rows; }
  int cols() const { return value().cols; }
  // Value of a 1 x 1 node.
  double scalar() const;
  bool valid() const { return tape != nullptr && id >= 0; }
};

class Tape {
 public:
  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Copies `m` into the tape. No gradient is tracked.
  Var constant(Matrix m);
  // References external storage (must outlive the tape).
  Var input(const Matrix& m, bool requires_grad = false);
  // Memoized by address: the same parameter maps to one leaf per tape.
  Var param(const Matrix& m);

  const Matrix& value(Var v) const { return value(v.id); }
  const Matrix& value(int id) const;
  // Gradient of the last backward() root w.r.t. `v`; nullptr if none flowed.
  const Matrix* grad(Var v) const;
  const Matrix* grad_of(const Matrix& param) const;

  // Seeds d(root)/d(root) = 1. `root` must be 1 x 1.
  void backward(Var root);

  bool recording() const { return record_; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  // Number of log arguments clamped at epsilon by neg_log.
  int clamp_count() const { return clamp_count_; }
  void note_clamp(int n) { clamp_count_ += n; }

  using Backward = std::function<void(Tape&, int self)>;
  Var push(Matrix value, bool requires_grad, Backward back);
  // Gradient accumulator of node `id`, allocated as zeros on first access.
  Matrix& grad_ref(int id);
  bool has_grad(int id) const { return nodes_[id].has_grad; }

 private:
  struct Node {
    Matrix own;
    const Matrix* ext = nullptr;
    Matrix grad;
    bool has_grad = false;
    bool requires_grad = false;
    Backward back;
  };

  bool record_;
  int clamp_count_ = 0;
  std::deque<Node> nodes_;  // stable references across push
  std::unordered_map<const Matrix*, int> params_;
};

// ---- operations ----

// op(a) * op(b)
Var matmul(Var a, Var b, bool trans_a = false, bool trans_b = false);
Var add(Var a, Var b);
Var sub(Var a, Var b);
// a (r x c) + bias (r x 1) broadcast over columns.
Var add_col_bias(Var a, Var bias);
// a (r x c) + v^T broadcast over rows; v is c x 1.
Var add_row_broadcast(Var a, Var v);
// s * a + c elementwise.
Var affine(Var a, double s, double c = 0.0);
inline Var scale(Var a, double s) { return affine(a, s, 0.0); }
// Hadamard product.
Var mul(Var a, Var b);
// Hadamard product with a constant mask (dropout).
Var mul_const(Var a, const Matrix& mask);
Var relu(Var a);
Var tanh(Var a);
Var sigmoid(Var a);
Var softmax_cols(Var a);
Var softmax_rows(Var a);
// -log(max(a, eps)) elementwise; gradient is zero where clamped.
Var neg_log(Var a, double eps = 1e-12);
Var pick(Var a, int r, int c);
Var sum(Var a);
// Row means (r x 1).
Var mean_cols(Var a);
Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
Var slice_rows(Var a, int r0, int n);
Var gather_cols(Var a, std::span<const int> idx);
inline Var column(Var a, int c) { return gather_cols(a, std::span<const int>(&c, 1)); }
Var transpose(Var a);
// Row `r` of `table` as a column vector.
Var embed_row(Var table, int r);
// Per-column layer normalization with per-row gain and bias (r x 1 each).
Var layer_norm_cols(Var x, Var gain, Var bias, double eps = 1e-5);

}  // namespace gvd::ad
