// Serial reference kernels against their OpenMP counterparts, plus full aggregation rules.

#include "byzopt/aggregators.hpp"
#include "byzopt/kernels.hpp"
#include "byzopt/rng.hpp"

#include <benchmark/benchmark.h>

using namespace byzopt;

namespace {

std::vector<Vector> inputs(int n, Index d) {
  std::vector<Vector> out;
  for (int i = 0; i < n; ++i) {
    KeyedStream rng(5, static_cast<std::uint32_t>(i), 0, 0);
    Vector v(d);
    for (Index j = 0; j < d; ++j) v[j] = rng.normal();
    out.push_back(v);
  }
  return out;
}

template <Vector (*K)(std::span<const Vector>)>
void unary(benchmark::State& state) {
  const auto in = inputs(static_cast<int>(state.range(0)), state.range(1));
  for (auto _ : state) benchmark::DoNotOptimize(K(in));
  state.SetItemsProcessed(state.iterations() * state.range(0) * state.range(1));
}

template <Vector (*K)(std::span<const Vector>, int)>
void trimmed(benchmark::State& state) {
  const auto in = inputs(static_cast<int>(state.range(0)), state.range(1));
  const int trim = static_cast<int>(state.range(0)) / 5;
  for (auto _ : state) benchmark::DoNotOptimize(K(in, trim));
  state.SetItemsProcessed(state.iterations() * state.range(0) * state.range(1));
}

template <Matrix (*K)(std::span<const Vector>)>
void pairwise(benchmark::State& state) {
  const auto in = inputs(static_cast<int>(state.range(0)), state.range(1));
  for (auto _ : state) benchmark::DoNotOptimize(K(in));
}

void rule(benchmark::State& state, Rule r) {
  const auto in = inputs(static_cast<int>(state.range(0)), state.range(1));
  AggregatorConfig cfg{r, 0.2};
  for (auto _ : state) benchmark::DoNotOptimize(aggregate(cfg, in));
}

void shapes(benchmark::internal::Benchmark* b) {
  for (int n : {10, 50})
    for (Index d : {1000, 7850, 100000}) b->Args({n, d});
}

}  // namespace

BENCHMARK(unary<kernels::serial::coordinate_median>)->Name("median/serial")->Apply(shapes);
BENCHMARK(unary<kernels::omp::coordinate_median>)->Name("median/omp")->Apply(shapes);
BENCHMARK(trimmed<kernels::serial::trimmed_mean>)->Name("trimmed_mean/serial")->Apply(shapes);
BENCHMARK(trimmed<kernels::omp::trimmed_mean>)->Name("trimmed_mean/omp")->Apply(shapes);
BENCHMARK(pairwise<kernels::serial::pairwise_sq_distances>)->Name("pairwise/serial")->Apply(shapes);
BENCHMARK(pairwise<kernels::omp::pairwise_sq_distances>)->Name("pairwise/omp")->Apply(shapes);
BENCHMARK_CAPTURE(rule, krum, Rule::krum)->Apply(shapes);
BENCHMARK_CAPTURE(rule, geometric_median, Rule::geometric_median)->Apply(shapes);
BENCHMARK_CAPTURE(rule, centered_clipping, Rule::centered_clipping)->Apply(shapes);

BENCHMARK_MAIN();
