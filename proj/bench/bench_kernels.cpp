#include <benchmark/benchmark.h>

#include <cmath>
#include <random>

#include "defence/cnn.hpp"
#include "defence/fence_synth.hpp"
#include "defence/kernels.hpp"
#include "defence/motion.hpp"

using namespace defence;

namespace {

std::vector<double> random_vector(std::size_t n, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

const WarpOperator& dense_warp() {
  static const WarpOperator op = [] {
    const int w = 512, h = 512;
    std::vector<double> u(std::size_t(w) * h), v(u.size());
    for (std::size_t i = 0; i < u.size(); ++i) u[i] = 4 * std::sin(1e-3 * i), v[i] = -3.5;
    return build_warp(MotionField::dense(w, h, u, v), w, h);
  }();
  return op;
}

template <bool Serial>
void BM_gather(benchmark::State& state) {
  const WarpOperator& op = dense_warp();
  const auto x = random_vector(op.pixels(), 1);
  std::vector<double> y(op.pixels());
  for (auto _ : state) {
    if constexpr (Serial) kernels::gather_serial(op.rows(), x, y);
    else kernels::gather(op.rows(), x, y);
    benchmark::DoNotOptimize(y.data());
  }
}

template <bool Serial>
void BM_grad_div(benchmark::State& state) {
  const int w = 512, h = 512;
  const auto x = random_vector(std::size_t(w) * h * 3, 2);
  std::vector<double> gx(x.size()), gy(x.size()), d(x.size());
  for (auto _ : state) {
    if constexpr (Serial) {
      kernels::gradient_serial(x, w, h, gx, gy);
      kernels::divergence_serial(gx, gy, w, h, d);
    } else {
      kernels::gradient(x, w, h, gx, gy);
      kernels::divergence(gx, gy, w, h, d);
    }
    benchmark::DoNotOptimize(d.data());
  }
}

template <bool Serial>
void BM_shrink(benchmark::State& state) {
  const auto v = random_vector(std::size_t(512) * 512 * 3, 3);
  std::vector<double> out(v.size());
  for (auto _ : state) {
    if constexpr (Serial) kernels::shrink_serial(v, 0.2, out);
    else kernels::shrink(v, 0.2, out);
    benchmark::DoNotOptimize(out.data());
  }
}

template <bool Serial>
void BM_batch_gradient(benchmark::State& state) {
  static const auto scenes = make_training_scenes(1, 160, 160, 1);
  static const TexelDataset d = build_texel_dataset(scenes, 25, 25, 1);
  static const auto inputs = network_inputs(d);
  std::vector<TexelLabel> labels;
  for (const TexelSample& s : d.samples) labels.push_back(s.label);
  std::vector<std::size_t> batch(d.size());
  for (std::size_t i = 0; i < batch.size(); ++i) batch[i] = i;
  const CnnModel m = init_model(1);
  std::vector<double> g(m.parameters().size());
  for (auto _ : state) {
    std::fill(g.begin(), g.end(), 0.0);
    if constexpr (Serial) kernels::batch_gradient_serial(m, inputs, labels, batch, g);
    else kernels::batch_gradient(m, inputs, labels, batch, g);
    benchmark::DoNotOptimize(g.data());
  }
}

template <bool Serial>
void BM_window_scores(benchmark::State& state) {
  const Image lum = to_luminance(generate_background(256, 256, 3, 4));
  const CnnModel m = init_model(2);
  for (auto _ : state) {
    auto s = Serial ? kernels::window_scores_serial(m, lum, 4) : kernels::window_scores(m, lum, 4);
    benchmark::DoNotOptimize(s.data());
  }
}

}  // namespace

BENCHMARK(BM_gather<true>)->Name("gather/serial");
BENCHMARK(BM_gather<false>)->Name("gather/omp");
BENCHMARK(BM_grad_div<true>)->Name("grad_div/serial");
BENCHMARK(BM_grad_div<false>)->Name("grad_div/omp");
BENCHMARK(BM_shrink<true>)->Name("shrink/serial");
BENCHMARK(BM_shrink<false>)->Name("shrink/omp");
BENCHMARK(BM_batch_gradient<true>)->Name("batch_gradient/serial")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_batch_gradient<false>)->Name("batch_gradient/omp")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_window_scores<true>)->Name("window_scores/serial")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_window_scores<false>)->Name("window_scores/omp")->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
