#include <benchmark/benchmark.h>

#include <random>

#include "actseg/data.hpp"
#include "actseg/metrics.hpp"
#include "actseg/pomsgcn.hpp"
#include "actseg/trainer.hpp"
#include "actseg/transformer.hpp"

using namespace actseg;

namespace {

template <typename S>
Mat<S> random_input(Index t, Index d) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n;
  MatD m(t, d);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m.cast<S>();
}

template <typename S>
void BM_PomsgcnForward(benchmark::State& state) {
  PomsgcnConfig cfg;
  cfg.num_classes = 5;
  cfg.input_channels = 3;
  const PomsgcnModel<S> m(cfg, chain_graph(6), 1);
  const auto x = random_input<S>(state.range(0), 18);
  for (auto _ : state) benchmark::DoNotOptimize(m.forward(x));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK_TEMPLATE(BM_PomsgcnForward, float)->Arg(256)->Unit(benchmark::kMillisecond);
BENCHMARK_TEMPLATE(BM_PomsgcnForward, double)->Arg(256)->Unit(benchmark::kMillisecond);

template <typename S>
void BM_TransformerForward(benchmark::State& state) {
  TransformerConfig cfg;
  cfg.num_classes = 5;
  cfg.input_size = 18;
  const TransformerModel<S> m(cfg, 1);
  const auto x = random_input<S>(state.range(0), 18);
  for (auto _ : state) benchmark::DoNotOptimize(m.forward(x));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK_TEMPLATE(BM_TransformerForward, float)->Arg(256)->Arg(1024)->Unit(benchmark::kMillisecond);
BENCHMARK_TEMPLATE(BM_TransformerForward, double)->Arg(256)->Unit(benchmark::kMillisecond);

void BM_PomsgcnTrainStep(benchmark::State& state) {
  PomsgcnConfig cfg;
  cfg.num_classes = 5;
  cfg.input_channels = 3;
  const PomsgcnModel<double> m(cfg, chain_graph(6), 1);
  const auto x = random_input<double>(256, 18);
  std::vector<int> y(256);
  for (int t = 0; t < 256; ++t) y[static_cast<std::size_t>(t)] = (t / 50) % 5;
  auto grads = m.parameters().zeros_like();
  for (auto _ : state) {
    grads.set_zero();
    m.accumulate_gradients(x, y, LossConfig{}, 1.0, grads, nullptr);
  }
}
BENCHMARK(BM_PomsgcnTrainStep)->Unit(benchmark::kMillisecond);

void BM_Evaluate(benchmark::State& state) {
  SyntheticConfig cfg;
  cfg.num_sequences = 20;
  cfg.frames_per_sequence = static_cast<int>(state.range(0));
  const auto data = generate_synthetic(cfg);
  std::vector<std::vector<int>> gt, pred;
  std::mt19937_64 rng(2);
  for (const auto& s : data.samples) {
    gt.push_back(s.labels);
    auto p = s.labels;
    for (std::size_t t = 0; t + 7 < p.size(); t += 7) std::swap(p[t], p[t + 3]);
    pred.push_back(p);
  }
  EvaluationOptions opts;
  opts.thresholds = {0.1, 0.25, 0.5};
  for (auto _ : state) benchmark::DoNotOptimize(evaluate(pred, gt, opts));
}
BENCHMARK(BM_Evaluate)->Arg(256)->Arg(4096)->Unit(benchmark::kMicrosecond);

void BM_AdamStep(benchmark::State& state) {
  PomsgcnConfig cfg;
  cfg.num_classes = 5;
  cfg.input_channels = 3;
  PomsgcnModel<double> m(cfg, chain_graph(6), 1);
  auto grads = m.parameters().zeros_like();
  for (auto& p : grads) p.value.setConstant(1e-3);
  auto st = AdamState<double>::for_parameters(m.parameters());
  const TrainConfig tc;
  for (auto _ : state) adam_step(m.parameters(), grads, st, tc);
  state.SetItemsProcessed(state.iterations() * m.parameters().num_scalars());
}
BENCHMARK(BM_AdamStep)->Unit(benchmark::kMicrosecond);

}  // namespace
BENCHMARK_MAIN();
