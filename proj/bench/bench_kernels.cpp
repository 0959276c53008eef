// Parallel kernels against the serial reference on typical layer shapes.

#include <benchmark/benchmark.h>

#include <vector>

#include "hasseg/kernels/conv.hpp"
#include "hasseg/rng.hpp"

namespace {

using hasseg::kernels::ConvGeometry;
using hasseg::kernels::PoolGeometry;
using hasseg::kernels::UpGeometry;

std::vector<float> random_buffer(std::size_t n, std::uint64_t seed) {
  hasseg::Rng rng(seed);
  std::vector<float> v(n);
  for (float& e : v) e = static_cast<float>(rng.uniform(-1.0, 1.0));
  return v;
}

ConvGeometry conv_geometry(const benchmark::State& state) {
  ConvGeometry g;
  g.in_channels = static_cast<std::size_t>(state.range(0));
  g.out_channels = static_cast<std::size_t>(state.range(1));
  g.kernel = static_cast<std::size_t>(state.range(2));
  g.padding = g.kernel / 2;
  g.in_d = g.in_h = g.in_w = static_cast<std::size_t>(state.range(3));
  return g;
}

void set_conv_counters(benchmark::State& state, const ConvGeometry& g, double passes) {
  const double flops = 2.0 * static_cast<double>(g.out_channels * g.patch() * g.out_spatial()) * passes;
  state.counters["GFLOPS"] = benchmark::Counter(flops * static_cast<double>(state.iterations()) / 1e9,
                                                benchmark::Counter::kIsRate);
}

template <bool Parallel>
void BM_Conv3dForward(benchmark::State& state) {
  const ConvGeometry g = conv_geometry(state);
  auto x = random_buffer(g.in_channels * g.in_spatial(), 1);
  auto w = random_buffer(g.out_channels * g.patch(), 2);
  std::vector<float> y(g.out_channels * g.out_spatial());
  for (auto _ : state) {
    if constexpr (Parallel) {
      hasseg::kernels::conv3d_forward(g, x.data(), w.data(), static_cast<const float*>(nullptr), y.data());
    } else {
      hasseg::reference::conv3d_forward(g, x.data(), w.data(), static_cast<const float*>(nullptr), y.data());
    }
    benchmark::DoNotOptimize(y.data());
  }
  set_conv_counters(state, g, 1.0);
}

template <bool Parallel>
void BM_Conv3dBackward(benchmark::State& state) {
  const ConvGeometry g = conv_geometry(state);
  auto x = random_buffer(g.in_channels * g.in_spatial(), 1);
  auto w = random_buffer(g.out_channels * g.patch(), 2);
  auto dy = random_buffer(g.out_channels * g.out_spatial(), 3);
  std::vector<float> dx(x.size()), dw(w.size());
  for (auto _ : state) {
    if constexpr (Parallel) {
      hasseg::kernels::conv3d_backward_input(g, w.data(), dy.data(), dx.data());
      hasseg::kernels::conv3d_backward_weight(g, x.data(), dy.data(), dw.data(), static_cast<float*>(nullptr));
    } else {
      hasseg::reference::conv3d_backward_input(g, w.data(), dy.data(), dx.data());
      hasseg::reference::conv3d_backward_weight(g, x.data(), dy.data(), dw.data(), static_cast<float*>(nullptr));
    }
    benchmark::DoNotOptimize(dx.data());
  }
  set_conv_counters(state, g, 2.0);
}

template <bool Parallel>
void BM_ConvTranspose3d(benchmark::State& state) {
  UpGeometry g;
  g.in_channels = static_cast<std::size_t>(state.range(0));
  g.out_channels = static_cast<std::size_t>(state.range(1));
  g.in_d = g.in_h = g.in_w = static_cast<std::size_t>(state.range(2));
  auto x = random_buffer(g.in_channels * g.in_spatial(), 1);
  auto w = random_buffer(g.in_channels * g.out_channels * 8, 2);
  std::vector<float> y(g.out_channels * g.out_spatial());
  for (auto _ : state) {
    if constexpr (Parallel) {
      hasseg::kernels::conv_transpose3d_forward(g, x.data(), w.data(), y.data());
    } else {
      hasseg::reference::conv_transpose3d_forward(g, x.data(), w.data(), y.data());
    }
    benchmark::DoNotOptimize(y.data());
  }
}

template <bool Parallel>
void BM_MaxPool3d(benchmark::State& state) {
  PoolGeometry g;
  g.channels = static_cast<std::size_t>(state.range(0));
  g.in_d = g.in_h = g.in_w = static_cast<std::size_t>(state.range(1));
  auto x = random_buffer(g.channels * g.in_d * g.in_h * g.in_w, 1);
  std::vector<float> y(g.channels * g.out_spatial());
  std::vector<std::uint32_t> arg(y.size());
  for (auto _ : state) {
    if constexpr (Parallel) {
      hasseg::kernels::maxpool3d_forward(g, x.data(), y.data(), arg.data());
    } else {
      hasseg::reference::maxpool3d_forward(g, x.data(), y.data(), arg.data());
    }
    benchmark::DoNotOptimize(y.data());
  }
}

// Args: in_channels, out_channels, kernel, extent.
void conv_shapes(benchmark::internal::Benchmark* b) {
  b->Args({16, 16, 3, 24})->Args({32, 32, 3, 24})->Args({64, 64, 5, 12})->Args({32, 32, 3, 48})
      ->Unit(benchmark::kMillisecond);
}

}  // namespace

BENCHMARK(BM_Conv3dForward<true>)->Apply(conv_shapes);
BENCHMARK(BM_Conv3dForward<false>)->Args({16, 16, 3, 24})->Args({64, 64, 5, 12})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Conv3dBackward<true>)->Apply(conv_shapes);
BENCHMARK(BM_Conv3dBackward<false>)->Args({16, 16, 3, 24})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvTranspose3d<true>)->Args({64, 32, 12})->Args({32, 16, 24})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvTranspose3d<false>)->Args({64, 32, 12})->Args({32, 16, 24})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_MaxPool3d<true>)->Args({16, 48})->Args({64, 12})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_MaxPool3d<false>)->Args({16, 48})->Args({64, 12})->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
