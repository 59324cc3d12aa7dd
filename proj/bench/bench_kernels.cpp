// Serial reference kernels against their OpenMP counterparts. The thread
// count follows OMP_NUM_THREADS; on a single core the two should be close.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "rfsr/kernels.hpp"

namespace k = rfsr::kernels;

namespace {

std::vector<double> noise(std::size_t n, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

struct Serial {
  static constexpr auto conv = &k::serial::conv2d_forward;
  static constexpr auto conv_grad_w = &k::serial::conv2d_backward_weight;
  static constexpr auto haar = &k::serial::haar_forward;
  static constexpr auto filter = &k::serial::filter_valid;
  static constexpr auto gram = &k::serial::gram;
};

struct Parallel {
  static constexpr auto conv = &k::parallel::conv2d_forward;
  static constexpr auto conv_grad_w = &k::parallel::conv2d_backward_weight;
  static constexpr auto haar = &k::parallel::haar_forward;
  static constexpr auto filter = &k::parallel::filter_valid;
  static constexpr auto gram = &k::parallel::gram;
};

// state.range(0) is the spatial side length.
template <class Impl>
void BM_Conv2d(benchmark::State& state) {
  const int side = static_cast<int>(state.range(0));
  const k::ConvShape s{16, 16, side, side, 3};
  const auto in = noise(16u * side * side, 1), w = noise(16 * 16 * 9, 2);
  std::vector<double> out(in.size());
  for (auto _ : state) {
    Impl::conv(in, w, s, out);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long>(out.size()));
}

template <class Impl>
void BM_Conv2dWeightGrad(benchmark::State& state) {
  const int side = static_cast<int>(state.range(0));
  const k::ConvShape s{16, 16, side, side, 3};
  const auto in = noise(16u * side * side, 3), g = noise(16u * side * side, 4);
  std::vector<double> gw(16 * 16 * 9);
  for (auto _ : state) {
    Impl::conv_grad_w(g, in, s, gw);
    benchmark::DoNotOptimize(gw.data());
  }
}

template <class Impl>
void BM_Haar(benchmark::State& state) {
  const int side = static_cast<int>(state.range(0));
  const auto in = noise(3u * side * side, 5);
  const std::size_t q = in.size() / 4;
  std::vector<double> ll(q), lh(q), hl(q), hh(q);
  for (auto _ : state) {
    Impl::haar(in, 3, side, side, ll, lh, hl, hh);
    benchmark::DoNotOptimize(ll.data());
  }
  state.SetBytesProcessed(state.iterations() * static_cast<long>(in.size() * sizeof(double)));
}

template <class Impl>
void BM_Filter(benchmark::State& state) {
  const int side = static_cast<int>(state.range(0));
  const auto in = noise(static_cast<std::size_t>(side) * side, 6);
  const auto taps = noise(11, 7);
  std::vector<double> out(static_cast<std::size_t>(side - 10) * (side - 10));
  for (auto _ : state) {
    Impl::filter(in, side, side, taps, out);
    benchmark::DoNotOptimize(out.data());
  }
}

template <class Impl>
void BM_Gram(benchmark::State& state) {
  const int channels = static_cast<int>(state.range(0));
  const std::size_t positions = 64 * 64;
  const auto f = noise(channels * positions, 8);
  std::vector<double> g(static_cast<std::size_t>(channels) * channels);
  for (auto _ : state) {
    Impl::gram(f, channels, positions, 1.0 / (channels * positions), g);
    benchmark::DoNotOptimize(g.data());
  }
}

}  // namespace

BENCHMARK(BM_Conv2d<Serial>)->Arg(32)->Arg(128);
BENCHMARK(BM_Conv2d<Parallel>)->Arg(32)->Arg(128);
BENCHMARK(BM_Conv2dWeightGrad<Serial>)->Arg(64);
BENCHMARK(BM_Conv2dWeightGrad<Parallel>)->Arg(64);
BENCHMARK(BM_Haar<Serial>)->Arg(256)->Arg(1024);
BENCHMARK(BM_Haar<Parallel>)->Arg(256)->Arg(1024);
BENCHMARK(BM_Filter<Serial>)->Arg(128)->Arg(512);
BENCHMARK(BM_Filter<Parallel>)->Arg(128)->Arg(512);
BENCHMARK(BM_Gram<Serial>)->Arg(8)->Arg(32);
BENCHMARK(BM_Gram<Parallel>)->Arg(8)->Arg(32);

BENCHMARK_MAIN();
