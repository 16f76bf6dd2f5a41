#include <benchmark/benchmark.h>

#include "cadlab/denoiser.hpp"
#include "cadlab/diffusion.hpp"
#include "cadlab/metrics.hpp"
#include "cadlab/noisesim.hpp"
#include "cadlab/rng.hpp"
#include "cadlab/tensor.hpp"

using namespace cadlab;

namespace {

nd::Tensor random_tensor(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(rows * cols);
  for (auto& x : v) x = standard_normal(rng);
  return nd::Tensor::from({rows, cols}, std::move(v));
}

struct Batch {
  nd::Tensor x;
  std::vector<double> t, c;
  std::vector<std::size_t> y;
};

Batch batch(std::size_t n) {
  Batch b{random_tensor(n, 2, 1), {}, {}, {}};
  Rng rng(2);
  for (std::size_t i = 0; i < n; ++i) {
    b.t.push_back(uniform01(rng));
    b.c.push_back(uniform01(rng));
    b.y.push_back(i % 8);
  }
  return b;
}

PointSet cloud(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  PointSet p(2);
  for (std::size_t i = 0; i < n; ++i) {
    const double v[2] = {standard_normal(rng), standard_normal(rng)};
    p.push_back(v);
  }
  return p;
}

}  // namespace

static void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_tensor(n, n, 1);
  const auto b = random_tensor(n, n, 2);
  for (auto _ : state) benchmark::DoNotOptimize(nd::matmul(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(128)->Arg(256);

static void BM_DenoiserForward(benchmark::State& state) {
  const denoiser::Denoiser model(denoiser::DenoiserConfig{}, 0);
  const auto b = batch(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(model.predict_eps(b.x, b.t, b.y, b.c));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_DenoiserForward)->Arg(128)->Arg(2000);

static void BM_DenoiserForwardBackward(benchmark::State& state) {
  denoiser::Denoiser model(denoiser::DenoiserConfig{}, 0);
  const auto b = batch(128);
  const auto tensors = std::vector<nd::Tensor>(model.params().tensors().begin(), model.params().tensors().end());
  for (auto _ : state) {
    benchmark::DoNotOptimize(nd::grad(nd::sum(nd::square(model.predict_eps(b.x, b.t, b.y, b.c))), tensors));
  }
}
BENCHMARK(BM_DenoiserForwardBackward);

static void BM_Prdc(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto real = cloud(n, 1);
  const auto fake = cloud(n, 2);
  for (auto _ : state) benchmark::DoNotOptimize(metrics::prdc(real, fake, 5));
}
BENCHMARK(BM_Prdc)->Arg(500)->Arg(2000);

static void BM_SamplerStep(benchmark::State& state) {
  const denoiser::Denoiser model(denoiser::DenoiserConfig{}, 0);
  const auto b = batch(static_cast<std::size_t>(state.range(0)));
  diffusion::SamplerOptions options;
  options.eta = 1.0;
  std::vector<Rng> rngs;
  for (std::size_t i = 0; i < b.y.size(); ++i) rngs.emplace_back(i);
  const diffusion::GuidanceSpec guidance{diffusion::GuidanceMode::ca_cfg, 1.0};
  for (auto _ : state) {
    benchmark::DoNotOptimize(diffusion::sampler_step(model, b.x, 0.5, 0.496, b.y, b.c, guidance, options, rngs));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_SamplerStep)->Arg(2000);

static void BM_CorruptLabels(benchmark::State& state) {
  std::vector<std::size_t> labels(10000);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = i % 10;
  noisesim::NoiseSimConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(noisesim::corrupt_labels(labels, cfg));
  state.SetItemsProcessed(state.iterations() * 10000);
}
BENCHMARK(BM_CorruptLabels);
BENCHMARK_MAIN();
