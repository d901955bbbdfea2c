#include "gvd/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace gvd::kernels {

namespace {

// One output row of C. Accumulates over k in ascending order; shared by the
// serial and parallel drivers so both produce identical bits.
inline void gemm_row(Trans ta, Trans tb, int i, int m, int n, int k, double alpha,
                     const double* a, const double* b, double beta, double* c,
                     double* acc) {
  std::fill(acc, acc + n, 0.0);
  for (int p = 0; p < k; ++p) {
    const double av = (ta == Trans::kNo) ? a[static_cast<long>(i) * k + p]
                                         : a[static_cast<long>(p) * m + i];
    if (tb == Trans::kNo) {
      const double* brow = b + static_cast<long>(p) * n;
      for (int j = 0; j < n; ++j) acc[j] += av * brow[j];
    } else {
      for (int j = 0; j < n; ++j) acc[j] += av * b[static_cast<long>(j) * k + p];
    }
  }
  double* crow = c + static_cast<long>(i) * n;
  if (beta == 0.0) {
    for (int j = 0; j < n; ++j) crow[j] = alpha * acc[j];
  } else {
    for (int j = 0; j < n; ++j) crow[j] = alpha * acc[j] + beta * crow[j];
  }
}

inline void softmax_strided(double* x, int len, long stride) {
  double mx = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < len; ++i) mx = std::max(mx, x[i * stride]);
  double sum = 0.0;
  for (int i = 0; i < len; ++i) {
    const double e = std::exp(x[i * stride] - mx);
    x[i * stride] = e;
    sum += e;
  }
  for (int i = 0; i < len; ++i) x[i * stride] /= sum;
}

}  // namespace

namespace serial {

void gemm(Trans ta, Trans tb, int m, int n, int k, double alpha,
          std::span<const double> a, std::span<const double> b, double beta,
          std::span<double> c) {
  std::vector<double> acc(n);
  for (int i = 0; i < m; ++i)
    gemm_row(ta, tb, i, m, n, k, alpha, a.data(), b.data(), beta, c.data(), acc.data());
}

void softmax_columns(int rows, int cols, std::span<double> x) {
  for (int j = 0; j < cols; ++j) softmax_strided(x.data() + j, rows, cols);
}

void softmax_rows(int rows, int cols, std::span<double> x) {
  for (int i = 0; i < rows; ++i) softmax_strided(x.data() + static_cast<long>(i) * cols, cols, 1);
}

}  // namespace serial

void gemm(Trans ta, Trans tb, int m, int n, int k, double alpha,
          std::span<const double> a, std::span<const double> b, double beta,
          std::span<double> c) {
  const long work = static_cast<long>(m) * n * k;
  if (work < kParallelThreshold || m < 2) {
    serial::gemm(ta, tb, m, n, k, alpha, a, b, beta, c);
    return;
  }
#pragma omp parallel
  {
    std::vector<double> acc(n);
#pragma omp for schedule(static)
    for (int i = 0; i < m; ++i)
      gemm_row(ta, tb, i, m, n, k, alpha, a.data(), b.data(), beta, c.data(), acc.data());
  }
}

void softmax_columns(int rows, int cols, std::span<double> x) {
  const long work = static_cast<long>(rows) * cols;
#pragma omp parallel for schedule(static) if (work >= kParallelThreshold)
  for (int j = 0; j < cols; ++j) softmax_strided(x.data() + j, rows, cols);
}

void softmax_rows(int rows, int cols, std::span<double> x) {
  const long work = static_cast<long>(rows) * cols;
#pragma omp parallel for schedule(static) if (work >= kParallelThreshold)
  for (int i = 0; i < rows; ++i)
    softmax_strided(x.data() + static_cast<long>(i) * cols, cols, 1);
}

void set_num_threads(int n) {
#ifdef _OPENMP
  if (n > 0) omp_set_num_threads(n);
#else
  (void)n;
#endif
}

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

}  // namespace gvd::kernels
