// Parallel gemm kernels against their serial references, at the shapes the
// GRU sees (batch x hidden times hidden x 3*hidden) and a few larger ones.
// Thread count follows OMP_NUM_THREADS.

#include <benchmark/benchmark.h>

#include "icudg/matrix.hpp"
#include "icudg/rng.hpp"

namespace {

using icudg::Matrix;

Matrix random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
  icudg::CounterRng rng(seed);
  Matrix m(r, c);
  for (auto& v : m.values()) v = rng.normal();
  return m;
}

template <void (*Kernel)(const Matrix&, const Matrix&, Matrix&)>
void bm_gemm_nn(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto k = static_cast<std::size_t>(state.range(1));
  const auto a = random_matrix(n, k, 1);
  const auto b = random_matrix(k, 3 * k, 2);
  Matrix out(n, 3 * k);
  for (auto _ : state) {
    out.fill(0.0);
    Kernel(a, b, out);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long>(n * k * 3 * k));
}

template <void (*Kernel)(const Matrix&, const Matrix&, Matrix&)>
void bm_gemm_tn(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto k = static_cast<std::size_t>(state.range(1));
  const auto a = random_matrix(n, k, 3);
  const auto b = random_matrix(n, 3 * k, 4);
  Matrix out(k, 3 * k);
  for (auto _ : state) {
    out.fill(0.0);
    Kernel(a, b, out);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long>(n * k * 3 * k));
}

void shapes(benchmark::internal::Benchmark* b) {
  b->Args({64, 32})->Args({128, 64})->Args({256, 128})->Args({512, 256});
}

}  // namespace

BENCHMARK(bm_gemm_nn<icudg::kernels::gemm_nn>)->Name("gemm_nn/parallel")->Apply(shapes);
BENCHMARK(bm_gemm_nn<icudg::kernels::serial::gemm_nn>)->Name("gemm_nn/serial")->Apply(shapes);
BENCHMARK(bm_gemm_tn<icudg::kernels::gemm_tn>)->Name("gemm_tn/parallel")->Apply(shapes);
BENCHMARK(bm_gemm_tn<icudg::kernels::serial::gemm_tn>)->Name("gemm_tn/serial")->Apply(shapes);

BENCHMARK_MAIN();
