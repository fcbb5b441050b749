#include <benchmark/benchmark.h>

#include <random>

#include "sqnt/int_inference.hpp"
#include "sqnt/kernels.hpp"

namespace {

using namespace sqnt;

Tensor random_tensor(const Shape& s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n;
  Tensor t(s);
  for (auto& v : t.values()) v = n(rng);
  return t;
}

IntTensor random_ints(const Shape& s, int range, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> u(-range, range);
  IntTensor t{s, {}};
  std::int64_t n = 1;
  for (auto d : s) n *= d;
  t.values.resize(static_cast<std::size_t>(n));
  for (auto& v : t.values) v = u(rng);
  return t;
}

// args: channels, spatial size
void BM_Conv2d(benchmark::State& state) {
  const auto c = state.range(0), hw = state.range(1);
  const Tensor x = random_tensor({8, c, hw, hw}, 1), k = random_tensor({c, c, 3, 3}, 2);
  for (auto _ : state) benchmark::DoNotOptimize(kernels::conv2d(x, k, {}));
  state.SetItemsProcessed(state.iterations() * 8 * c * c * 9 * hw * hw);
}
BENCHMARK(BM_Conv2d)->Args({8, 16})->Args({16, 16})->Args({32, 32});

void BM_Conv2dTranspose(benchmark::State& state) {
  const auto c = state.range(0), hw = state.range(1);
  const Tensor y = random_tensor({8, c, hw, hw}, 3), k = random_tensor({c, c, 3, 3}, 4);
  for (auto _ : state) benchmark::DoNotOptimize(kernels::conv2d_transpose(y, k, {}, hw, hw));
  state.SetItemsProcessed(state.iterations() * 8 * c * c * 9 * hw * hw);
}
BENCHMARK(BM_Conv2dTranspose)->Args({8, 16})->Args({16, 16});

void BM_IntConv2d(benchmark::State& state) {
  const auto c = state.range(0), hw = state.range(1);
  const IntTensor x = random_ints({8, c, hw, hw}, 15, 5), k = random_ints({c, c, 3, 3}, 7, 6);
  for (auto _ : state) benchmark::DoNotOptimize(int_conv2d(x, k, 1));
  state.SetItemsProcessed(state.iterations() * 8 * c * c * 9 * hw * hw);
}
BENCHMARK(BM_IntConv2d)->Args({8, 16})->Args({16, 16});

}  // namespace
