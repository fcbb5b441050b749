#include <benchmark/benchmark.h>

#include <random>

#include "sqnt/checkpoint.hpp"
#include "sqnt/config.hpp"
#include "sqnt/int_inference.hpp"
#include "sqnt/network.hpp"
#include "sqnt/ops.hpp"

namespace {

using namespace sqnt;

Tensor random_batch(std::int64_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d;
  Tensor t({n, 1, 16, 16});
  for (auto& v : t.values()) v = d(rng);
  return t;
}

Network make_net(const char* arch) {
  ExperimentConfig cfg;
  cfg.set("arch", arch);
  return Network::build(build_specs(cfg, 1, 4), 1);
}

ForwardContext four_bits() {
  ForwardContext ctx;
  ctx.bits_w = ctx.bits_a = 4;
  return ctx;
}

// Forward plus backward of a 32-image batch through the desk-sized network.
void BM_TrainStep(benchmark::State& state, const char* arch, bool quantized) {
  Network net = make_net(arch);
  const Tensor x = random_batch(32, 1);
  const ForwardContext ctx = quantized ? four_bits() : ForwardContext{};
  const std::vector<int> labels(32, 1);
  for (auto _ : state) {
    Var loss = cross_entropy(net.forward(Var::constant(x), ctx), labels);
    backward(loss);
    for (auto& p : net.parameters()) p.var.zero_grad();
    benchmark::DoNotOptimize(loss.value()[0]);
  }
  state.SetItemsProcessed(state.iterations() * 32);
}
BENCHMARK_CAPTURE(BM_TrainStep, sym_res_fp, "sym_res", false);
BENCHMARK_CAPTURE(BM_TrainStep, sym_res_q4, "sym_res", true);
BENCHMARK_CAPTURE(BM_TrainStep, plain_res_q4, "plain_res", true);
BENCHMARK_CAPTURE(BM_TrainStep, sym_mobile_q4, "sym_mobile", true);

void BM_FakeQuantInference(benchmark::State& state) {
  Network net = make_net("sym_res");
  const Tensor x = random_batch(32, 2);
  const ForwardContext ctx = four_bits();
  for (auto _ : state) benchmark::DoNotOptimize(net.forward(Var::constant(x), ctx).value());
  state.SetItemsProcessed(state.iterations() * 32);
}
BENCHMARK(BM_FakeQuantInference);

void BM_IntInference(benchmark::State& state) {
  Network net = make_net("sym_res");
  const Tensor x = random_batch(32, 2);
  net.forward(Var::constant(x), four_bits());  // calibrate activation scales
  const IntModel model = IntModel::from_checkpoint(make_checkpoint(net, {4, 4, DType::f64}));
  for (auto _ : state) benchmark::DoNotOptimize(model.forward(x));
  state.SetItemsProcessed(state.iterations() * 32);
}
BENCHMARK(BM_IntInference);

}  // namespace
