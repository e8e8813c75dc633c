// Serial reference kernels against the OpenMP versions, plus one U-Net
// forward/backward step at the training shape.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "mhal/kernels.hpp"
#include "mhal/losses.hpp"
#include "mhal/nets.hpp"

using namespace mhal;
namespace k = mhal::kernels;

namespace {

std::vector<float> randv(std::size_t n, std::uint64_t seed, float lo = -1, float hi = 1) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(lo, hi);
  std::vector<float> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

// args: batch, in channels, out channels, size
template <bool Par>
void BM_conv_forward(benchmark::State& st) {
  const auto g = k::make_conv_geom(st.range(0), st.range(1), st.range(3), st.range(3), st.range(2), 3, 3, 1, 1);
  const auto x = randv(static_cast<std::size_t>(g.batch * g.in_ch * g.in_h * g.in_w), 1);
  const auto w = randv(static_cast<std::size_t>(g.out_ch * g.in_ch * 9), 2);
  const auto b = randv(static_cast<std::size_t>(g.out_ch), 3);
  std::vector<float> y(static_cast<std::size_t>(g.batch * g.out_ch * g.out_h * g.out_w));
  for (auto _ : st) {
    if constexpr (Par) k::par::conv2d_forward(g, std::span<const float>(x), w, b, y);
    else k::ref::conv2d_forward(g, std::span<const float>(x), w, b, y);
    benchmark::DoNotOptimize(y.data());
  }
}

template <bool Par>
void BM_conv_backward(benchmark::State& st) {
  const auto g = k::make_conv_geom(st.range(0), st.range(1), st.range(3), st.range(3), st.range(2), 3, 3, 1, 1);
  const auto x = randv(static_cast<std::size_t>(g.batch * g.in_ch * g.in_h * g.in_w), 1);
  const auto w = randv(static_cast<std::size_t>(g.out_ch * g.in_ch * 9), 2);
  const auto gy = randv(static_cast<std::size_t>(g.batch * g.out_ch * g.out_h * g.out_w), 3);
  std::vector<float> gx(x.size()), gw(w.size()), gb(static_cast<std::size_t>(g.out_ch));
  for (auto _ : st) {
    if constexpr (Par) k::par::conv2d_backward(g, std::span<const float>(x), w, gy, gx, gw, gb);
    else k::ref::conv2d_backward(g, std::span<const float>(x), w, gy, gx, gw, gb);
    benchmark::DoNotOptimize(gx.data());
  }
}

// args: batch, channels, size
template <bool Par>
void BM_grid_sample(benchmark::State& st) {
  const k::SampleGeom g{st.range(0), st.range(1), st.range(2), st.range(2), st.range(2), st.range(2)};
  const auto x = randv(static_cast<std::size_t>(g.batch * g.channels * g.in_h * g.in_w), 1);
  const auto grid = randv(static_cast<std::size_t>(g.batch * g.out_h * g.out_w * 2), 2, -1.05f, 1.05f);
  std::vector<float> y(static_cast<std::size_t>(g.batch * g.channels * g.out_h * g.out_w));
  for (auto _ : st) {
    if constexpr (Par) k::par::grid_sample_forward(g, std::span<const float>(x), grid, y);
    else k::ref::grid_sample_forward(g, std::span<const float>(x), grid, y);
    benchmark::DoNotOptimize(y.data());
  }
}

template <bool Par>
void BM_instance_norm(benchmark::State& st) {
  const k::PlaneGeom g{st.range(0), st.range(1), st.range(2), st.range(2)};
  const auto x = randv(static_cast<std::size_t>(g.batch * g.channels * g.h * g.w), 1);
  std::vector<float> y(x.size()), inv(static_cast<std::size_t>(g.batch * g.channels));
  for (auto _ : st) {
    if constexpr (Par) k::par::instance_norm_forward(g, 1e-5f, std::span<const float>(x), y, inv);
    else k::ref::instance_norm_forward(g, 1e-5f, std::span<const float>(x), y, inv);
    benchmark::DoNotOptimize(y.data());
  }
}

void BM_unet_step(benchmark::State& st) {
  UNetConfig c;
  c.base_channels = static_cast<int>(st.range(1));
  UNet<float> net(c);
  auto p = net.init(1);
  p.set_requires_grad(true);
  const auto x = Tensor<float>::from({st.range(0), 1, 64, 64}, randv(static_cast<std::size_t>(st.range(0) * 4096), 4));
  LabelMap l(st.range(0), 64, 64, 1);
  for (auto _ : st) {
    Tape<float> tape;
    TapeScope<float> scope(tape);
    p.clear_grads();
    tape.backward(seg_loss(net.forward(p, x), l));
  }
}

}  // namespace

BENCHMARK(BM_conv_forward<false>)->Name("conv_forward/ref")->Args({16, 8, 8, 64})->Args({16, 24, 8, 64})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_conv_forward<true>)->Name("conv_forward/par")->Args({16, 8, 8, 64})->Args({16, 24, 8, 64})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_conv_backward<false>)->Name("conv_backward/ref")->Args({16, 8, 8, 64})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_conv_backward<true>)->Name("conv_backward/par")->Args({16, 8, 8, 64})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_grid_sample<false>)->Name("grid_sample/ref")->Args({16, 5, 64})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_grid_sample<true>)->Name("grid_sample/par")->Args({16, 5, 64})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_instance_norm<false>)->Name("instance_norm/ref")->Args({16, 8, 64})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_instance_norm<true>)->Name("instance_norm/par")->Args({16, 8, 64})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_unet_step)->Args({16, 8})->Args({16, 16})->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
