#include <benchmark/benchmark.h>
#include <torch/torch.h>

#include "scod/crnet.hpp"
#include "scod/metrics.hpp"
#include "scod/objectives.hpp"

namespace {

torch::Tensor scribble_for(std::int64_t s) {
  auto l = torch::zeros({1, s, s}, torch::kUInt8);
  l.index_put_({0, torch::indexing::Slice(s / 4, s / 4 + 4), torch::indexing::Slice(s / 4, 3 * s / 4)}, 1);
  l.index_put_({0, torch::indexing::Slice(s - 6, s - 2), torch::indexing::Slice(2, s - 2)}, 2);
  return l;
}

void BM_ContextAffinity(benchmark::State& state) {
  const auto s = state.range(0);
  torch::manual_seed(0);
  const auto pred = torch::rand({1, 1, s, s});
  const auto image = torch::rand({1, 3, s, s});
  scod::LossConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(scod::context_affinity_loss(pred, image, cfg));
}
BENCHMARK(BM_ContextAffinity)->Arg(96)->Arg(320)->Unit(benchmark::kMillisecond);

void BM_SemanticSignificance(benchmark::State& state) {
  const auto s = state.range(0);
  torch::manual_seed(0);
  auto pred = torch::full({1, 1, s, s}, 0.1);
  pred.index_put_({0, 0, torch::indexing::Slice(), torch::indexing::Slice(0, s / 2)}, 0.9);
  const auto feature = torch::randn({1, 64, s, s});
  scod::LossConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(scod::semantic_significance_loss(pred, feature, scribble_for(s), cfg, 60));
}
BENCHMARK(BM_SemanticSignificance)->Arg(96)->Arg(320)->Unit(benchmark::kMillisecond);

void BM_CrossView(benchmark::State& state) {
  const auto s = state.range(0);
  torch::manual_seed(0);
  const auto a = torch::rand({4, 1, s, s});
  const auto b = torch::rand({4, 1, s, s});
  const auto valid = torch::ones({4, s, s}, torch::kBool);
  for (auto _ : state) benchmark::DoNotOptimize(scod::rcv_loss(a, b, valid, 0.85, 0.3));
}
BENCHMARK(BM_CrossView)->Arg(96)->Arg(320)->Unit(benchmark::kMillisecond);

void BM_Metrics(benchmark::State& state) {
  const auto s = state.range(0);
  torch::manual_seed(0);
  const auto pred = torch::rand({s, s}, torch::kFloat64);
  auto gt = torch::zeros({s, s}, torch::kFloat64);
  gt.index_put_({torch::indexing::Slice(s / 4, 3 * s / 4), torch::indexing::Slice(s / 3, 2 * s / 3)}, 1.0);
  for (auto _ : state) benchmark::DoNotOptimize(scod::compute_metrics("x", pred, gt));
}
BENCHMARK(BM_Metrics)->Arg(96)->Arg(352)->Unit(benchmark::kMillisecond);

void BM_Forward(benchmark::State& state) {
  const auto s = state.range(0);
  auto net = scod::make_crnet(scod::CRNetConfig{});
  net->eval();
  torch::NoGradGuard guard;
  const auto image = torch::rand({1, 3, s, s});
  for (auto _ : state) benchmark::DoNotOptimize(net->forward(image));
}
BENCHMARK(BM_Forward)->Arg(96)->Arg(320)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
