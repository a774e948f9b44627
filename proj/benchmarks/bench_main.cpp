#include <benchmark/benchmark.h>

#include "sparseshare/compactor.hpp"
#include "sparseshare/ops.hpp"
#include "sparseshare/rng.hpp"

using namespace sparseshare;

namespace {

Tensor<float> random_input(const Shape& shape, std::uint64_t seed) {
    Tensor<float> t(shape);
    Rng rng(seed);
    for (auto& v : t.data()) v = static_cast<float>(rng.uniform(-1, 1));
    return t;
}

std::vector<TaskSpec> desk_tasks() { return {TaskSpec::segmentation(), TaskSpec::depth(), TaskSpec::normals()}; }

/// Zeroes every channel group whose seeded draw falls below `fraction`.
void sparsify(MultiTaskModel<float>& m, const GroupPartition& part, double fraction) {
    Rng rng(5);
    for (const Group& g : part.groups) {
        if (rng.uniform(0, 1) >= fraction) continue;
        auto& v = m.params().at(g.param).value;
        g.indices.for_each([&](std::size_t i) { v[i] = 0.0f; });
    }
}

void BM_Conv2d(benchmark::State& state) {
    const auto c = static_cast<std::size_t>(state.range(0));
    const auto x = random_input({8, c, 32, 32}, 1);
    const auto w = random_input({c, c, 3, 3}, 2);
    const ops::ConvOptions opt{1, 1, 1};
    for (auto _ : state) benchmark::DoNotOptimize(ops::conv2d<float>(x, w, nullptr, opt));
    state.SetItemsProcessed(state.iterations() * 8 * 32 * 32 * c * c * 9);
}
BENCHMARK(BM_Conv2d)->Arg(16)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_ProxAll(benchmark::State& state) {
    auto m = MultiTaskModel<float>::build(BackboneSpec::desk_default(), desk_tasks(), 3);
    const auto part = make_partition(m.params(), GroupScheme::channel_wise);
    for (auto _ : state) prox_all(m.params(), part, 1e-9);
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(part.groups.size()));
}
BENCHMARK(BM_ProxAll)->Unit(benchmark::kMicrosecond);

void BM_Backbone(benchmark::State& state) {
    const bool compact = state.range(0) != 0;
    const double fraction = static_cast<double>(state.range(1)) / 100.0;
    auto m = MultiTaskModel<float>::build(BackboneSpec::desk_default(), desk_tasks(), 3);
    const auto part = make_partition(m.params(), GroupScheme::channel_wise);
    sparsify(m, part, fraction);
    const auto cb = apply_compaction(m, plan_compaction(m, part));
    const auto x = random_input({8, 3, 32, 32}, 4);
    for (auto _ : state) benchmark::DoNotOptimize(compact ? cb.forward(x) : m.infer_shared(x));
    state.SetLabel(compact ? "compact" : "dense");
}
BENCHMARK(BM_Backbone)
    ->ArgsProduct({{0, 1}, {0, 50, 90}})
    ->ArgNames({"compact", "sparsity_pct"})
    ->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
