// Serial reference vs OpenMP kernels on shapes the denoiser and AR model hit.
#include <benchmark/benchmark.h>

#include "dsdi/kernels.hpp"
#include "dsdi/rng.hpp"

using namespace dsdi;
namespace k = dsdi::kernels;

namespace {

using Gemm = void (*)(const Matrix&, const Matrix&, Matrix&, bool);

// args: m, k, n
template <Gemm F, bool TransA, bool TransB>
void bm_gemm(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const auto kk = static_cast<std::size_t>(state.range(1));
  const auto n = static_cast<std::size_t>(state.range(2));
  Rng rng(1);
  const Matrix a = TransA ? rng.normal_matrix(kk, m) : rng.normal_matrix(m, kk);
  const Matrix b = TransB ? rng.normal_matrix(n, kk) : rng.normal_matrix(kk, n);
  Matrix out(m, n);
  for (auto _ : state) {
    F(a, b, out, false);
    benchmark::DoNotOptimize(out.data());
  }
  state.counters["GMAC/s"] = benchmark::Counter(static_cast<double>(m * kk * n) * state.iterations() / 1e9,
                                                benchmark::Counter::kIsRate);
}

template <void (*F)(const Matrix&, const Matrix&, Matrix&)>
void bm_conv(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const auto l = static_cast<std::size_t>(state.range(1));
  Rng rng(2);
  const Matrix kern = rng.normal_matrix(c, l), u = rng.normal_matrix(c, l);
  Matrix out(c, l);
  for (auto _ : state) {
    F(kern, u, out);
    benchmark::DoNotOptimize(out.data());
  }
}

void gemm_shapes(benchmark::internal::Benchmark* b) {
  b->Args({64, 96, 48})->Args({128, 384, 24})->Args({256, 256, 256})->Args({1536, 32, 96});
}

void conv_shapes(benchmark::internal::Benchmark* b) { b->Args({64, 48})->Args({128, 256})->Args({256, 1024}); }

}  // namespace

BENCHMARK(bm_gemm<k::serial::gemm_nn, false, false>)->Name("gemm_nn/serial")->Apply(gemm_shapes);
BENCHMARK(bm_gemm<k::parallel::gemm_nn, false, false>)->Name("gemm_nn/parallel")->Apply(gemm_shapes);
BENCHMARK(bm_gemm<k::serial::gemm_tn, true, false>)->Name("gemm_tn/serial")->Apply(gemm_shapes);
BENCHMARK(bm_gemm<k::parallel::gemm_tn, true, false>)->Name("gemm_tn/parallel")->Apply(gemm_shapes);
BENCHMARK(bm_gemm<k::serial::gemm_nt, false, true>)->Name("gemm_nt/serial")->Apply(gemm_shapes);
BENCHMARK(bm_gemm<k::parallel::gemm_nt, false, true>)->Name("gemm_nt/parallel")->Apply(gemm_shapes);
BENCHMARK(bm_conv<k::serial::causal_conv>)->Name("causal_conv/serial")->Apply(conv_shapes);
BENCHMARK(bm_conv<k::parallel::causal_conv>)->Name("causal_conv/parallel")->Apply(conv_shapes);

int main(int argc, char** argv) {
  benchmark::Initialize(&argc, argv);
  benchmark::AddCustomContext("omp_threads", std::to_string(k::max_threads()));
  benchmark::RunSpecifiedBenchmarks();
  benchmark::Shutdown();
  return 0;
}
