// Serial reference vs OpenMP kernels at denoiser-like shapes.

#include "topodiff/kernels.hpp"

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

using namespace topodiff::kernels;

namespace {

std::vector<float> randv(std::size_t n) {
  std::mt19937 rng(1);
  std::normal_distribution<float> d(0.0f, 1.0f);
  std::vector<float> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

template <bool Parallel>
void bm_gemm(benchmark::State& st) {
  const auto m = static_cast<std::size_t>(st.range(0)), k = static_cast<std::size_t>(st.range(1)),
             n = static_cast<std::size_t>(st.range(2));
  const auto a = randv(m * k), b = randv(k * n);
  std::vector<float> c(m * n);
  for (auto _ : st) {
    if constexpr (Parallel)
      parallel::gemm_nn(a.data(), b.data(), c.data(), m, k, n, false);
    else
      serial::gemm_nn(a.data(), b.data(), c.data(), m, k, n, false);
    benchmark::DoNotOptimize(c.data());
  }
  st.counters["GFLOP/s"] =
      benchmark::Counter(2.0 * static_cast<double>(m * k * n), benchmark::Counter::kIsIterationInvariantRate,
                         benchmark::Counter::kIs1000);
}

template <bool Parallel>
void bm_attention(benchmark::State& st) {
  const auto s = static_cast<std::size_t>(st.range(0)), width = static_cast<std::size_t>(st.range(1));
  const std::size_t heads = 4;
  const std::vector<Span> spans = {{0, s}};
  const auto q = randv(s * width), k = randv(s * width), v = randv(s * width);
  std::vector<float> out(s * width), probs(attention_prob_size(spans, heads));
  for (auto _ : st) {
    if constexpr (Parallel)
      parallel::attention_forward(q.data(), k.data(), v.data(), out.data(), probs.data(), s, width, heads, spans);
    else
      serial::attention_forward(q.data(), k.data(), v.data(), out.data(), probs.data(), s, width, heads, spans);
    benchmark::DoNotOptimize(out.data());
  }
}

}  // namespace

BENCHMARK(bm_gemm<false>)->Args({288, 64, 64})->Args({288, 64, 128})->Args({1056, 800, 800})->Unit(benchmark::kMillisecond);
BENCHMARK(bm_gemm<true>)->Args({288, 64, 64})->Args({288, 64, 128})->Args({1056, 800, 800})->Unit(benchmark::kMillisecond);
BENCHMARK(bm_attention<false>)->Args({288, 64})->Args({1056, 800})->Unit(benchmark::kMillisecond);
BENCHMARK(bm_attention<true>)->Args({288, 64})->Args({1056, 800})->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
