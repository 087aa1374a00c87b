#include <benchmark/benchmark.h>

#include "tppkit/pgem.hpp"
#include "tppkit/training.hpp"

using namespace tppkit;

namespace {

ModelConfig bench_config(int width) {
  ModelConfig c;
  c.label_count = 5;
  c.channel_width = width;
  c.embed_dim = 16;
  c.memory_depth = 3;
  c.fake_count = 1;
  c.hidden_f1 = 32;
  c.time_scale = 1000.0;
  return c;
}

// Roughly args[0] real events on [0, 1000].
AugmentedSequence bench_sequence(std::size_t events) {
  PgemSpec spec;
  spec.label_count = 5;
  for (int k = 0; k < 5; ++k) spec.nodes.push_back({{}, {}, {static_cast<double>(events) / 5000.0}});
  return augment(simulate(spec, 1000.0, 3), 1);
}

void BM_Forward(benchmark::State& state) {
  const ModelConfig c = bench_config(static_cast<int>(state.range(1)));
  const ModelParams p = ModelParams::init(c, 1);
  const AugmentedSequence seq = bench_sequence(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(forward(seq, p, c, false));
  state.counters["tokens"] = static_cast<double>(seq.size());
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(seq.size()));
}
BENCHMARK(BM_Forward)->ArgsProduct({{100, 400}, {4, 8}})->Unit(benchmark::kMillisecond);

void BM_ObjectiveGradient(benchmark::State& state) {
  const ModelConfig c = bench_config(static_cast<int>(state.range(1)));
  const ModelParams p = ModelParams::init(c, 1);
  const AugmentedSequence seq = bench_sequence(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(objective_gradient(seq, p, c));
  state.counters["tokens"] = static_cast<double>(seq.size());
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(seq.size()));
}
BENCHMARK(BM_ObjectiveGradient)->ArgsProduct({{100, 400}, {4, 8}})->Unit(benchmark::kMillisecond);

void BM_TrainEpoch(benchmark::State& state) {
  Dataset d;
  d.label_count = 5;
  for (int i = 0; i < 4; ++i) {
    EventStream s = real_events(bench_sequence(100));
    s.id = "s" + std::to_string(i);
    d.streams.push_back(std::move(s));
  }
  TrainConfig t;
  t.epochs = 1;
  t.record_timing = false;
  t.threads = static_cast<int>(state.range(0));
  t.batch = 4;
  for (auto _ : state) benchmark::DoNotOptimize(train(d, nullptr, bench_config(4), t));
}
BENCHMARK(BM_TrainEpoch)->Arg(1)->Arg(4)->UseRealTime()->Unit(benchmark::kMillisecond);

}  // namespace
