#pragma once

// Dense kernels used by the model. Every kernel has a serial reference in
// kernels::serial and an OpenMP version in kernels. The parallel versions
// split work over independent outputs only, and each output is reduced in the
// same order as the serial reference, so results are bit-identical.

#include <span>

namespace gvd::kernels {

enum class Trans { kNo, kYes };

// C = alpha * op(A) * op(B) + beta * C, row-major. op(A) is m x k, op(B) is
// k x n, C is m x n. A is stored m x k (or k x m when transposed).
void gemm(Trans ta, Trans tb, int m, int n, int k, double alpha,
          std::span<const double> a, std::span<const double> b, double beta,
          std::span<double> c);

// In-place softmax of every column (rows x cols matrix).
void softmax_columns(int rows, int cols, std::span<double> x);
// In-place softmax of every row.
void softmax_rows(int rows, int cols, std::span<double> x);

// Work (multiply-adds) above which the OpenMP versions fork.
inline constexpr long kParallelThreshold = 1L << 15;

// Sets the number of threads used by the OpenMP kernels (<= 0: runtime default).
void set_num_threads(int n);
int max_threads();

namespace serial {

void gemm(Trans ta, Trans tb, int m, int n, int k, double alpha,
          std::span<const double> a, std::span<const double> b, double beta,
          std::span<double> c);
void softmax_columns(int rows, int cols, std::span<double> x);
void softmax_rows(int rows, int cols, std::span<double> x);

}  // namespace serial

}  // namespace gvd::kernels
