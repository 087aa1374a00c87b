#include <benchmark/benchmark.h>

#include "tppkit/pgem.hpp"

using namespace tppkit;

namespace {

void BM_Simulate(benchmark::State& state) {
  const PgemSpec spec = sample_spec(static_cast<int>(state.range(0)), 1);
  std::uint64_t seed = 0;
  std::size_t events = 0;
  for (auto _ : state) {
    const EventStream s = simulate(spec, 1000.0, ++seed);
    events += s.epochs.size();
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(events));
}
BENCHMARK(BM_Simulate)->Arg(5)->Arg(20);

void BM_ExactLL(benchmark::State& state) {
  const PgemSpec spec = sample_spec(static_cast<int>(state.range(0)), 1);
  const EventStream s = simulate(spec, 10000.0, 2);
  for (auto _ : state) benchmark::DoNotOptimize(exact_ll(spec, s));
  state.counters["events"] = static_cast<double>(s.epochs.size());
}
BENCHMARK(BM_ExactLL)->Arg(5)->Arg(20);

}  // namespace
