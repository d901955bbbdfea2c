// Serial reference vs OpenMP kernels, plus one teacher-forced training step.

#include <benchmark/benchmark.h>

#include <vector>

#include "gvd/gradcheck.hpp"
#include "gvd/kernels.hpp"
#include "gvd/rng.hpp"

using namespace gvd;
namespace k = gvd::kernels;

namespace {

std::vector<double> random_vec(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (double& x : v) x = normal(rng);
  return v;
}

template <bool Parallel>
void BM_Gemm(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const auto a = random_vec(static_cast<std::size_t>(n) * n, 1);
  const auto b = random_vec(static_cast<std::size_t>(n) * n, 2);
  std::vector<double> c(static_cast<std::size_t>(n) * n);
  for (auto _ : state) {
    if constexpr (Parallel) k::gemm(k::Trans::kNo, k::Trans::kNo, n, n, n, 1.0, a, b, 0.0, c);
    else k::serial::gemm(k::Trans::kNo, k::Trans::kNo, n, n, n, 1.0, a, b, 0.0, c);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long>(n) * n * n);
}

template <bool Parallel>
void BM_SoftmaxColumns(benchmark::State& state) {
  const int rows = static_cast<int>(state.range(0)), cols = 512;
  const auto src = random_vec(static_cast<std::size_t>(rows) * cols, 3);
  std::vector<double> x;
  for (auto _ : state) {
    x = src;
    if constexpr (Parallel) k::softmax_columns(rows, cols, x);
    else k::serial::softmax_columns(rows, cols, x);
    benchmark::DoNotOptimize(x.data());
  }
}

void BM_TrainStepTiny(benchmark::State& state) {
  const TinyInstance inst = make_tiny_instance(1);
  const LambdaWeights lw{0.1, 0.1, 0.1};
  for (auto _ : state) benchmark::DoNotOptimize(loss_and_gradient(inst.model, inst.sample, lw));
}

}  // namespace

BENCHMARK(BM_Gemm<false>)->Name("gemm/serial")->Arg(64)->Arg(256);
BENCHMARK(BM_Gemm<true>)->Name("gemm/openmp")->Arg(64)->Arg(256);
BENCHMARK(BM_SoftmaxColumns<false>)->Name("softmax_columns/serial")->Arg(100)->Arg(1000);
BENCHMARK(BM_SoftmaxColumns<true>)->Name("softmax_columns/openmp")->Arg(100)->Arg(1000);
BENCHMARK(BM_TrainStepTiny)->Name("train_step/tiny");

BENCHMARK_MAIN();
