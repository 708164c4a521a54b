// Convolution kernel and block throughput: OpenMP kernels against the serial
// reference, plus one desk-scale block forward and backward pass.

#include <benchmark/benchmark.h>

#include <vector>

#include "msafeb/kernels.hpp"
#include "msafeb/msafeb.hpp"
#include "msafeb/rng.hpp"

using namespace msafeb;
namespace k = msafeb::kernels;

namespace {

k::ConvGeometry geometry(std::size_t channels, std::size_t size, std::size_t kernel, std::size_t dilation,
                         std::size_t groups) {
  k::ConvGeometry g;
  g.batch = 16;
  g.in_channels = channels;
  g.out_channels = channels;
  g.height = g.width = size;
  g.kernel = kernel;
  g.dilation = dilation;
  g.groups = groups;
  g.pad = dilation * (kernel - 1) / 2;
  g.out_height = g.out_width = size;
  return g;
}

std::vector<float> filled(std::size_t n, Rng& rng) {
  std::vector<float> v(n);
  for (auto& x : v) x = float(rng.uniform(-1.0, 1.0));
  return v;
}

template <bool Parallel>
void conv_forward(benchmark::State& state) {
  const auto g = geometry(state.range(0), state.range(1), state.range(2), state.range(3), state.range(4));
  Rng rng(1);
  const auto in = filled(g.input_size(), rng), w = filled(g.weight_size(), rng), b = filled(g.out_channels, rng);
  std::vector<float> out(g.output_size());
  for (auto _ : state) {
    if constexpr (Parallel)
      k::conv2d_forward(g, in, w, b, out);
    else
      k::serial::conv2d_forward(g, in, w, b, out);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * g.output_size() * g.in_per_group() * g.kernel * g.kernel);
}

template <bool Parallel>
void conv_backward(benchmark::State& state) {
  const auto g = geometry(state.range(0), state.range(1), state.range(2), state.range(3), state.range(4));
  Rng rng(2);
  const auto in = filled(g.input_size(), rng), w = filled(g.weight_size(), rng),
             gout = filled(g.output_size(), rng);
  std::vector<float> gin(g.input_size()), gw(g.weight_size());
  for (auto _ : state) {
    if constexpr (Parallel) {
      k::conv2d_backward_input(g, gout, w, gin);
      k::conv2d_backward_weight(g, gout, in, gw);
    } else {
      k::serial::conv2d_backward_input(g, gout, w, gin);
      k::serial::conv2d_backward_weight(g, gout, in, gw);
    }
    benchmark::DoNotOptimize(gin.data());
    benchmark::DoNotOptimize(gw.data());
  }
}

void block_step(benchmark::State& state) {
  set_checked_mode(false);
  Rng rng(3);
  ParameterSet params;
  MsafebBlock block(MsafebConfig::desk(64), params, "msafeb", rng);
  const Tensor x = Tensor::create({16, 64, 8, 8}, filled(16 * 64 * 64, rng));
  for (auto _ : state) {
    backward(sum(block(x, Mode::train)));
    for (auto& p : params.entries()) p.value.clear_grad();
  }
  set_checked_mode(true);
}

// channels, spatial size, kernel, dilation, groups
void conv_args(benchmark::internal::Benchmark* b) {
  b->Args({32, 16, 3, 1, 1})->Args({64, 8, 3, 4, 1})->Args({64, 8, 5, 2, 8})->Args({64, 8, 1, 1, 1});
  b->Unit(benchmark::kMicrosecond);
}

}  // namespace

BENCHMARK(conv_forward<true>)->Name("conv_forward/openmp")->Apply(conv_args);
BENCHMARK(conv_forward<false>)->Name("conv_forward/serial")->Apply(conv_args);
BENCHMARK(conv_backward<true>)->Name("conv_backward/openmp")->Apply(conv_args);
BENCHMARK(conv_backward<false>)->Name("conv_backward/serial")->Apply(conv_args);
BENCHMARK(block_step)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
