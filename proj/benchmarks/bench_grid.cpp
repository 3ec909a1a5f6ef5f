// Microbenchmarks for the interpolation and composition hot paths.

#include <benchmark/benchmark.h>

#include <random>

#include "morphreg/grid.hpp"
#include "morphreg/rng.hpp"

namespace {

morphreg::VectorField random_field(const morphreg::GridMeta& meta, double scale, std::uint64_t seed) {
    auto field = morphreg::make_field(meta);
    std::mt19937_64 gen(seed);
    for (auto& c : field.data) c = static_cast<float>(morphreg::uniform_range(gen, -scale, scale));
    return field;
}

void BM_trilinear_sample(benchmark::State& state) {
    morphreg::GridMeta meta{{48, 48, 32}, {0.97, 0.97, 3.0}, {0, 0, 0}};
    auto vol = morphreg::make_volume(meta);
    std::mt19937_64 gen(7);
    for (auto& v : vol.values) v = static_cast<float>(morphreg::uniform01(gen));

    std::vector<morphreg::Point3> pts(4096);
    for (auto& p : pts)
        p = {morphreg::uniform_range(gen, 0, 47), morphreg::uniform_range(gen, 0, 47),
             morphreg::uniform_range(gen, 0, 31)};

    for (auto _ : state) {
        double acc = 0;
        for (const auto& p : pts) acc += morphreg::trilinear_sample(vol, p);
        benchmark::DoNotOptimize(acc);
    }
    state.SetItemsProcessed(static_cast<int64_t>(state.iterations()) * static_cast<int64_t>(pts.size()));
}
BENCHMARK(BM_trilinear_sample);

void BM_compose_displacements(benchmark::State& state) {
    morphreg::GridMeta meta{{48, 48, 32}, {0.97, 0.97, 3.0}, {0, 0, 0}};
    auto a = random_field(meta, 0.5, 11);
    auto b = random_field(meta, 0.5, 12);
    for (auto _ : state) {
        auto u = morphreg::compose_displacements(a, b);
        benchmark::DoNotOptimize(u.data.data());
    }
    state.SetItemsProcessed(static_cast<int64_t>(state.iterations()) * meta.voxel_count());
}
BENCHMARK(BM_compose_displacements);

}  // namespace

BENCHMARK_MAIN();
