// Serial reference kernels against the OpenMP ones, on the shapes the desk
// protocol hits (batch 64, 16x16 inputs, widths 16/32/32).

#include <benchmark/benchmark.h>

#include <vector>

#include "mobyal/numcore/kernels.hpp"
#include "mobyal/rng.hpp"

namespace k = mobyal::numcore::kernels;

namespace {

std::vector<float> random_vec(std::size_t n, std::uint64_t seed) {
  mobyal::Rng rng(seed);
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.normal());
  return v;
}

k::ConvGeometry geometry(const benchmark::State& s) {
  k::ConvGeometry g;
  g.batch = 64;
  g.in_channels = static_cast<std::size_t>(s.range(0));
  g.out_channels = static_cast<std::size_t>(s.range(1));
  g.height = g.width = static_cast<std::size_t>(s.range(2));
  g.stride = 1;
  return g;
}

template <bool Parallel>
void BM_gemm(benchmark::State& s) {
  const auto m = static_cast<std::size_t>(s.range(0)), n = static_cast<std::size_t>(s.range(1)),
             kk = static_cast<std::size_t>(s.range(2));
  const auto a = random_vec(m * kk, 1), b = random_vec(kk * n, 2);
  std::vector<float> c(m * n);
  for (auto _ : s) {
    if constexpr (Parallel) k::gemm(m, n, kk, a.data(), b.data(), c.data(), false);
    else k::reference::gemm(m, n, kk, a.data(), b.data(), c.data(), false);
    benchmark::DoNotOptimize(c.data());
  }
  s.SetItemsProcessed(static_cast<std::int64_t>(s.iterations() * 2 * m * n * kk));
}

template <bool Parallel>
void BM_gemm_nt(benchmark::State& s) {
  const auto m = static_cast<std::size_t>(s.range(0)), n = static_cast<std::size_t>(s.range(1)),
             kk = static_cast<std::size_t>(s.range(2));
  const auto a = random_vec(m * kk, 1), b = random_vec(n * kk, 2);
  std::vector<float> c(m * n);
  for (auto _ : s) {
    if constexpr (Parallel) k::gemm_nt(m, n, kk, a.data(), b.data(), c.data(), false);
    else k::reference::gemm_nt(m, n, kk, a.data(), b.data(), c.data(), false);
    benchmark::DoNotOptimize(c.data());
  }
  s.SetItemsProcessed(static_cast<std::int64_t>(s.iterations() * 2 * m * n * kk));
}

template <bool Parallel>
void BM_conv_forward(benchmark::State& s) {
  const auto g = geometry(s);
  const auto x = random_vec(g.batch * g.in_channels * g.height * g.width, 3);
  const auto w = random_vec(g.out_channels * g.patch_size(), 4);
  std::vector<float> y(g.batch * g.out_channels * g.out_pixels());
  for (auto _ : s) {
    if constexpr (Parallel) k::conv2d_forward<float>(g, x, w, y, nullptr);
    else k::reference::conv2d_forward<float>(g, x, w, y);
    benchmark::DoNotOptimize(y.data());
  }
}

template <bool Parallel>
void BM_conv_backward(benchmark::State& s) {
  const auto g = geometry(s);
  const auto x = random_vec(g.batch * g.in_channels * g.height * g.width, 3);
  const auto w = random_vec(g.out_channels * g.patch_size(), 4);
  const auto dy = random_vec(g.batch * g.out_channels * g.out_pixels(), 5);
  std::vector<float> y(dy.size()), dx(x.size()), dw(w.size()), col;
  k::conv2d_forward<float>(g, x, w, y, &col);
  for (auto _ : s) {
    if constexpr (Parallel) k::conv2d_backward<float>(g, col, w, dy, dx, dw);
    else k::reference::conv2d_backward<float>(g, x, w, dy, dx, dw);
    benchmark::DoNotOptimize(dw.data());
  }
}

template <bool Parallel>
void BM_min_distance(benchmark::State& s) {
  const auto n = static_cast<std::size_t>(s.range(0)), dim = static_cast<std::size_t>(s.range(1));
  mobyal::Rng rng(6);
  std::vector<double> pts(n * dim), center(dim), dist(n, 1e300);
  for (auto& v : pts) v = rng.normal();
  for (auto& v : center) v = rng.normal();
  for (auto _ : s) {
    if constexpr (Parallel) k::min_sq_distance_update(pts, dim, center, dist);
    else k::reference::min_sq_distance_update(pts, dim, center, dist);
    benchmark::DoNotOptimize(dist.data());
  }
}

}  // namespace

// m, n, k: conv-as-gemm shapes of the three blocks, plus a square case.
#define GEMM_ARGS Args({16, 16384, 27})->Args({32, 4096, 144})->Args({32, 4096, 288})->Args({256, 256, 256})
BENCHMARK(BM_gemm<false>)->GEMM_ARGS;
BENCHMARK(BM_gemm<true>)->GEMM_ARGS;
BENCHMARK(BM_gemm_nt<false>)->GEMM_ARGS;
BENCHMARK(BM_gemm_nt<true>)->GEMM_ARGS;

// in, out, size
#define CONV_ARGS Args({3, 16, 16})->Args({16, 32, 16})->Args({32, 32, 8})
BENCHMARK(BM_conv_forward<false>)->CONV_ARGS;
BENCHMARK(BM_conv_forward<true>)->CONV_ARGS;
BENCHMARK(BM_conv_backward<false>)->CONV_ARGS;
BENCHMARK(BM_conv_backward<true>)->CONV_ARGS;

BENCHMARK(BM_min_distance<false>)->Args({2200, 32});
BENCHMARK(BM_min_distance<true>)->Args({2200, 32});

BENCHMARK_MAIN();
