#include <benchmark/benchmark.h>

#include <random>

#include "cleardr/clear.hpp"
#include "cleardr/ops.hpp"
#include "cleardr/parallel.hpp"
#include "cleardr/sequencer.hpp"

namespace {

using namespace cleardr;

Tensor random_tensor(Shape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  Tensor t(shape);
  for (float& v : t.data()) v = u(rng);
  return t;
}

KernelBank random_bank(std::size_t k, std::size_t c, std::size_t kh, std::size_t kw, std::uint64_t seed) {
  return KernelBank(random_tensor({k, c, kh, kw}, seed), std::vector<float>(k, 0.1f));
}

// Args: spatial size, input channels, output channels.
void BM_Conv2d(benchmark::State& state) {
  const auto hw = static_cast<std::size_t>(state.range(0));
  const auto c = static_cast<std::size_t>(state.range(1));
  const auto k = static_cast<std::size_t>(state.range(2));
  const Tensor x = random_tensor({1, c, hw, hw}, 1);
  const KernelBank kb = random_bank(k, c, 3, 3, 2);
  for (auto _ : state) benchmark::DoNotOptimize(conv2d(x, kb, {1, 1}));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(hw * hw * c * k * 9));
}
BENCHMARK(BM_Conv2d)->Args({64, 3, 16})->Args({32, 16, 32})->Args({256, 3, 16});

void BM_Conv2dAdjoint(benchmark::State& state) {
  const auto hw = static_cast<std::size_t>(state.range(0));
  const auto c = static_cast<std::size_t>(state.range(1));
  const auto k = static_cast<std::size_t>(state.range(2));
  const Shape in{1, c, hw, hw};
  const KernelBank kb = random_bank(k, c, 3, 3, 2);
  const Tensor r = random_tensor({1, k, hw, hw}, 3);
  for (auto _ : state) benchmark::DoNotOptimize(conv2d_adjoint(r, kb, {1, 1}, in));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(hw * hw * c * k * 9));
}
BENCHMARK(BM_Conv2dAdjoint)->Args({64, 3, 16})->Args({32, 16, 32})->Args({256, 3, 16});

SequencerModel default_model(std::size_t hw) {
  SequencerConfig cfg = SequencerConfig::desk_default();
  cfg.input = {1, 3, hw, hw};
  return initialize(cfg, 7);
}

void BM_Forward(benchmark::State& state) {
  const auto hw = static_cast<std::size_t>(state.range(0));
  const SequencerModel m = default_model(hw);
  const Tensor x = random_tensor(m.config.input, 4);
  for (auto _ : state) benchmark::DoNotOptimize(forward(m, x));
}
BENCHMARK(BM_Forward)->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);

void BM_AttentiveStack(benchmark::State& state) {
  const auto hw = static_cast<std::size_t>(state.range(0));
  const SequencerModel m = default_model(hw);
  const ForwardTrace t = forward(m, random_tensor(m.config.input, 5));
  for (auto _ : state) benchmark::DoNotOptimize(attentive_stack(t, m, GatingPolicy::kDeconvnet));
}
BENCHMARK(BM_AttentiveStack)->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);

// Same work, one map at a time, for comparison with the batched stack.
void BM_AttentiveResponsesOneByOne(benchmark::State& state) {
  const auto hw = static_cast<std::size_t>(state.range(0));
  const SequencerModel m = default_model(hw);
  const ForwardTrace t = forward(m, random_tensor(m.config.input, 5));
  for (auto _ : state) {
    for (std::size_t d = 0; d < m.config.grades.count(); ++d)
      benchmark::DoNotOptimize(attentive_response(t, m, d, GatingPolicy::kDeconvnet));
  }
}
BENCHMARK(BM_AttentiveResponsesOneByOne)->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
