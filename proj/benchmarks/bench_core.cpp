#include <benchmark/benchmark.h>

#include "spnet/data.hpp"
#include "spnet/model.hpp"
#include "spnet/pruner.hpp"
#include "spnet/rng.hpp"
#include "spnet/sensitivity.hpp"
#include "spnet/tensor.hpp"

using namespace spnet;

namespace {

DenseTensor random_tensor(std::vector<std::size_t> shape, std::uint64_t seed) {
    PhiloxRng rng(seed, 0);
    DenseTensor t(std::move(shape));
    for (double& v : t.values()) v = 2.0 * rng.next_double() - 1.0;
    return t;
}

void BM_matmul(benchmark::State& state) {
    const std::size_t n = static_cast<std::size_t>(state.range(0));
    const DenseTensor a = random_tensor({n, n}, 1);
    const DenseTensor b = random_tensor({n, n}, 2);
    for (auto _ : state) {
        benchmark::DoNotOptimize(matmul(a, b));
    }
    state.SetItemsProcessed(int64_t(state.iterations()) * n * n * n);
}
BENCHMARK(BM_matmul)->Arg(64)->Arg(256)->Arg(512);

void BM_conv2d(benchmark::State& state) {
    const DenseTensor w = random_tensor({20, 1, 5, 5}, 3);
    const DenseTensor x = random_tensor({1, 28, 28}, 4);
    for (auto _ : state) {
        benchmark::DoNotOptimize(conv2d(w, x, 1, 0));
    }
}
BENCHMARK(BM_conv2d);

void BM_philox(benchmark::State& state) {
    PhiloxRng rng(1, 0);
    double acc = 0;
    for (auto _ : state) {
        acc += rng.next_double();
    }
    benchmark::DoNotOptimize(acc);
    state.SetItemsProcessed(int64_t(state.iterations()));
}
BENCHMARK(BM_philox);

void BM_sensitivity_report(benchmark::State& state) {
    NetworkModel m = make_mlp({64, 128, 64, 10}, 5);
    const Dataset calib = synth_activations(64, parse_synth_spec("uniform:dim=64"), 6);
    for (auto _ : state) {
        benchmark::DoNotOptimize(compute_report(m, calib));
    }
}
BENCHMARK(BM_sensitivity_report);

void BM_prune_layer(benchmark::State& state) {
    NetworkModel m = make_mlp({64, 256, 64, 10}, 7);
    const Dataset calib = synth_activations(32, parse_synth_spec("uniform:dim=64"), 8);
    const SensitivityReport rep = compute_report(m, calib);
    PrunePlan plan;
    plan.mode = PruneMode::rand;
    plan.m = 512;
    std::uint64_t seed = 0;
    for (auto _ : state) {
        plan.seed = ++seed;
        benchmark::DoNotOptimize(prune_layer(m, 0, rep, plan));
    }
}
BENCHMARK(BM_prune_layer);

void BM_forward_lenet300(benchmark::State& state) {
    NetworkModel m = make_lenet300(9);
    const DenseTensor x = random_tensor({1, 28, 28}, 10);
    for (auto _ : state) {
        benchmark::DoNotOptimize(forward(m, x));
    }
}
BENCHMARK(BM_forward_lenet300);

}  // namespace
