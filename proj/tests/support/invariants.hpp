#pragma once

// Randomized normalization checks over tiny model instances: M_s columns,
// conditioned-similarity rows, attention simplices, beta rows, word
// distributions, and the joint loss identity.

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gvd/gradcheck.hpp"
#include "gvd/grounding.hpp"

namespace gvd::oracle {

struct NormalizationResult {
  int trials = 0;
  double col_stochastic = 0;  // max |column sum - 1| of M_s
  double row_stochastic = 0;  // conditioned similarity rows
  double alpha_simplex = 0;   // alpha and beta sums, plus negativity
  double word_dist = 0;
  double loss_identity = 0;
  double max() const {
    return std::max({col_stochastic, row_stochastic, alpha_simplex, word_dist, loss_identity});
  }
};

inline NormalizationResult check_normalization(int trials, std::uint64_t seed = 0) {
  NormalizationResult r;
  for (int trial = 0; trial < trials; ++trial) {
    const std::uint64_t s = mix_seed(seed, trial);
    TinyInstance inst = make_tiny_instance(s, trial % 2 == 0);
    Rng rng(mix_seed(s, 17));
    // widen the weights so softmaxes are far from uniform
    for (auto& p : inst.model.parameters())
      for (double& x : p.value->data) x *= 1.0 + 2.0 * uniform01(rng);
    const ForwardPass fp = teacher_forced_pass(inst.model, inst.sample);

    const Matrix& ms = fp.similarity;
    for (int j = 0; j < ms.cols; ++j) {
      double sum = 0;
      for (int k = 0; k < ms.rows; ++k) {
        sum += ms(k, j);
        if (ms(k, j) < 0) r.col_stochastic = std::max(r.col_stochastic, -ms(k, j));
      }
      r.col_stochastic = std::max(r.col_stochastic, std::abs(sum - 1));
    }

    std::vector<double> alpha(inst.sample.regions.size());
    for (double& a : alpha) a = uniform01(rng);
    const double total = std::accumulate(alpha.begin(), alpha.end(), 0.0);
    for (double& a : alpha) a /= total;
    const auto cs = conditioned_similarity(inst.sample.regions.features(), inst.model.bank, alpha);
    for (int k = 0; k < cs.probs.rows; ++k) {
      const auto row = cs.row(k);
      r.row_stochastic =
          std::max(r.row_stochastic, std::abs(std::accumulate(row.begin(), row.end(), 0.0) - 1));
    }

    for (const auto& st : fp.steps) {
      auto simplex = [&](const std::vector<double>& v) {
        if (v.empty()) return;
        double sum = 0;
        for (double x : v) {
          sum += x;
          if (x < 0) r.alpha_simplex = std::max(r.alpha_simplex, -x);
        }
        r.alpha_simplex = std::max(r.alpha_simplex, std::abs(sum - 1));
      };
      simplex(st.alpha);
      simplex(st.beta);
      r.word_dist = std::max(
          r.word_dist,
          std::abs(std::accumulate(st.word_probs.begin(), st.word_probs.end(), 0.0) - 1));
    }

    const LambdaWeights lw{uniform01(rng), uniform01(rng), uniform01(rng)};
    const LossBreakdown lb = joint_loss(fp.components, lw);
    const double expect = lb.sent + lw.alpha * lb.attn + lw.cls * lb.cls + lw.beta * lb.grd;
    r.loss_identity = std::max(r.loss_identity, std::abs(lb.total - expect));
    ++r.trials;
  }
  return r;
}

}  // namespace gvd::oracle
