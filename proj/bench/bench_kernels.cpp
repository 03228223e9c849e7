// OpenMP kernels against their serial reference versions.
//
//   ./freeup_bench --benchmark_filter=Conv
//
// Thread count for the parallel kernels comes from OMP_NUM_THREADS.

#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "freeup/kernels.hpp"

using namespace freeup;
namespace k = freeup::kernels;

namespace {

struct ConvCase {
  Tensor4 in, out;
  std::vector<float> weight, bias, dweight, dbias;
  k::ConvParams p{3, 2, 1};

  // Batch 32 of c_in x 32 x 32 maps to c_out channels, stride 2: the first
  // encoder stage of the desk model.
  ConvCase(int c_in, int c_out)
      : in(32, c_in, 32, 32),
        out(32, c_out, 16, 16),
        weight(std::size_t(c_out) * c_in * 9),
        bias(c_out),
        dweight(weight.size()),
        dbias(c_out) {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<float> u(-1.0f, 1.0f);
    for (auto& v : in.data) v = u(rng);
    for (auto& v : weight) v = u(rng);
    for (auto& v : bias) v = u(rng);
  }
};

template <bool Parallel>
void BM_ConvForward(benchmark::State& state) {
  ConvCase c(int(state.range(0)), int(state.range(1)));
  for (auto _ : state) {
    if constexpr (Parallel) {
      k::conv2d_forward(c.in, c.weight, c.bias, c.out, c.p);
    } else {
      k::reference::conv2d_forward(c.in, c.weight, c.bias, c.out, c.p);
    }
    benchmark::DoNotOptimize(c.out.data.data());
  }
}

template <bool Parallel>
void BM_ConvBackwardInput(benchmark::State& state) {
  ConvCase c(int(state.range(0)), int(state.range(1)));
  for (auto _ : state) {
    if constexpr (Parallel) {
      k::conv2d_backward_input(c.out, c.weight, c.in, c.p);
    } else {
      k::reference::conv2d_backward_input(c.out, c.weight, c.in, c.p);
    }
    benchmark::DoNotOptimize(c.in.data.data());
  }
}

template <bool Parallel>
void BM_ConvBackwardWeight(benchmark::State& state) {
  ConvCase c(int(state.range(0)), int(state.range(1)));
  for (auto _ : state) {
    if constexpr (Parallel) {
      k::conv2d_backward_weight(c.in, c.out, c.dweight, c.dbias, c.p);
    } else {
      k::reference::conv2d_backward_weight(c.in, c.out, c.dweight, c.dbias, c.p);
    }
    benchmark::DoNotOptimize(c.dweight.data());
  }
}

template <bool Parallel>
void BM_Spectrum(benchmark::State& state) {
  const Shape3 s{8, 32, 32};
  std::vector<k::Complex> planes(std::size_t(s.planes) * s.rows * s.cols);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (auto& z : planes) z = u(rng);
  for (auto _ : state) {
    auto work = planes;
    if constexpr (Parallel) {
      k::fft2d_planes(work, s, false);
    } else {
      k::reference::fft2d_planes(work, s, false);
    }
    benchmark::DoNotOptimize(work.data());
  }
}

}  // namespace

BENCHMARK(BM_ConvForward<false>)->Name("ConvForward/reference")->Args({8, 8})->Args({16, 32});
BENCHMARK(BM_ConvForward<true>)->Name("ConvForward/openmp")->Args({8, 8})->Args({16, 32});
BENCHMARK(BM_ConvBackwardInput<false>)->Name("ConvBackwardInput/reference")->Args({8, 8})->Args({16, 32});
BENCHMARK(BM_ConvBackwardInput<true>)->Name("ConvBackwardInput/openmp")->Args({8, 8})->Args({16, 32});
BENCHMARK(BM_ConvBackwardWeight<false>)->Name("ConvBackwardWeight/reference")->Args({8, 8})->Args({16, 32});
BENCHMARK(BM_ConvBackwardWeight<true>)->Name("ConvBackwardWeight/openmp")->Args({8, 8})->Args({16, 32});
BENCHMARK(BM_Spectrum<false>)->Name("Spectrum8x32x32/reference");
BENCHMARK(BM_Spectrum<true>)->Name("Spectrum8x32x32/openmp");

BENCHMARK_MAIN();
