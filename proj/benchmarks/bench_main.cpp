#include <benchmark/benchmark.h>

#include "mapn/kspace.hpp"
#include "mapn/models.hpp"
#include "mapn/ops.hpp"
#include "mapn/random.hpp"

using namespace mapn;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed)
{
    Tensor t(std::move(shape));
    Rng rng(seed);
    for (double& v : t.data()) v = rng.uniform(-1.0, 1.0);
    return t;
}

kspace::ComplexImage random_image(std::int64_t n, std::uint64_t seed)
{
    kspace::ComplexImage x(n, n);
    Rng rng(seed);
    for (double& v : x.real) v = rng.normal();
    return x;
}

void BM_Conv3x3Forward(benchmark::State& state)
{
    const auto c = state.range(0);
    const Tensor x = random_tensor({4, c, 64, 64}, 1);
    const Tensor w = random_tensor({c, c, 3, 3}, 2);
    for (auto _ : state) {
        Graph g;
        benchmark::DoNotOptimize(ops::conv2d(g.constant(x), g.constant(w), std::nullopt, 1, 1).value().ptr());
    }
}
BENCHMARK(BM_Conv3x3Forward)->Arg(16)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_Conv3x3Backward(benchmark::State& state)
{
    const auto c = state.range(0);
    const Tensor x = random_tensor({4, c, 64, 64}, 1);
    const Tensor w = random_tensor({c, c, 3, 3}, 2);
    for (auto _ : state) {
        Graph g;
        const Var y = ops::conv2d(g.leaf(x, true), g.leaf(w, true), std::nullopt, 1, 1);
        g.backward(ops::sum(y));
        benchmark::ClobberMemory();
    }
}
BENCHMARK(BM_Conv3x3Backward)->Arg(16)->Unit(benchmark::kMillisecond);

void BM_Fft2(benchmark::State& state)
{
    const auto x = random_image(state.range(0), 3);
    for (auto _ : state) benchmark::DoNotOptimize(kspace::fft2(x).real.data());
}
BENCHMARK(BM_Fft2)->Arg(64)->Arg(256)->Unit(benchmark::kMicrosecond);

void BM_DccnnForward(benchmark::State& state)
{
    Model model(desk_dccnn_spec(static_cast<PnKind>(state.range(0))), {"knee", "brain", "cardiac"}, 1);
    const auto mask = kspace::make_cartesian_mask(64, 4, 0.08, 1);
    std::vector<kspace::ComplexImage> measured;
    for (int b = 0; b < 4; ++b) measured.push_back(kspace::undersample(random_image(64, 10 + b), mask));
    for (auto _ : state) benchmark::DoNotOptimize(model.reconstruct(measured, mask, 1).size());
}
BENCHMARK(BM_DccnnForward)->Arg(0)->Arg(4)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
