#pragma once

#include "gvd/autodiff.hpp"
#include "gvd/rng.hpp"

namespace gvd {

// Inverted dropout. Inactive (identity) unless `rng` is set and train is on.
struct Dropout {
  bool train = false;
  Rng* rng = nullptr;

  bool active() const { return train && rng != nullptr; }
  ad::Var apply(ad::Var x, double rate) const;
};

// LSTM cell: gates = W x + U h + b split as (input, forget, cell, output).
struct LstmParams {
  Matrix w, u, b;
  int hidden() const { return u.cols; }
};

struct LstmState {
  ad::Var h, c;
};

LstmState lstm_step(const LstmParams& p, ad::Var x, const LstmState& prev);

// GRU cell (reset gate applied to U h + b_u).
struct GruParams {
  Matrix w, u, bw, bu;
  int hidden() const { return u.cols; }
};

ad::Var gru_step(const GruParams& p, ad::Var x, ad::Var h);

// Linear layer y = W x + b (b broadcast over columns).
ad::Var linear(ad::Var x, const Matrix& w, const Matrix& b);

}  // namespace gvd
