// Copyright 2026 The milcascade Authors
// SPDX-License-Identifier: Apache-2.0

#include <random>

#include <benchmark/benchmark.h>

#include "milcascade/cka.hpp"
#include "milcascade/dmin.hpp"
#include "milcascade/infersim.hpp"
#include "milcascade/lipn.hpp"
#include "milcascade/rng.hpp"
#include "milcascade/synthgen.hpp"

namespace {

using namespace milcascade;

DminParams model(int head_order) {
    DminShape s;
    s.order = head_order;
    return DminParams::random(s, 1);
}

Matrix features(int n, int d, std::uint64_t seed) {
    Rng rng = make_rng(seed, {});
    std::normal_distribution<double> nd;
    Matrix m(n, d);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = nd(rng);
    return m;
}

void BM_ChebyshevBasis(benchmark::State& state) {
    const RowVector x = RowVector::LinSpaced(32, -0.9, 0.9);
    const int order = static_cast<int>(state.range(0));
    for (auto _ : state) benchmark::DoNotOptimize(chebyshev_basis(x, order));
}
BENCHMARK(BM_ChebyshevBasis)->Arg(4)->Arg(12)->Arg(32);

void BM_DminForwardEval(benchmark::State& state) {
    const DminParams p = model(12);
    const Matrix x = features(static_cast<int>(state.range(0)), p.proj_w.rows(), 2);
    const DminHyper h;
    for (auto _ : state) benchmark::DoNotOptimize(dmin_forward_eval(p, x, h));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_DminForwardEval)->Arg(64)->Arg(512)->Arg(4096);

void BM_DminTrainStep(benchmark::State& state) {
    const DminParams p = model(12);
    const int n = static_cast<int>(state.range(0));
    const Matrix x = features(n, p.proj_w.rows(), 3);
    const DminHyper h;
    Rng rng = make_rng(4, {});
    const Matrix noise = gumbel_noise(n, rng);
    for (auto _ : state) {
        const DminForward fw = dmin_forward(p, x, h, noise);
        benchmark::DoNotOptimize(dmin_loss(fw, p, 1, h));
        benchmark::DoNotOptimize(dmin_backward(fw, p, x, 1, h));
    }
    state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_DminTrainStep)->Arg(64)->Arg(512);

void BM_LipnForward(benchmark::State& state) {
    const LipnParams p = LipnParams::random({}, 5);
    const Matrix lo = features(static_cast<int>(state.range(0)), p.d_lo(), 6);
    for (auto _ : state) benchmark::DoNotOptimize(lipn_forward(lo, p));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_LipnForward)->Arg(512)->Arg(4096);

void BM_CascadeInference(benchmark::State& state) {
    SynthConfig c;
    c.n_bags = 1;
    c.min_instances = c.max_instances = static_cast<int>(state.range(0));
    const BagPair bag = generate(c).front();
    const DminParams dmin = model(12);
    const LipnParams lipn = LipnParams::random({}, 7);
    const DminHyper h;
    const StageCostModel costs = reference_cost_model();
    for (auto _ : state) benchmark::DoNotOptimize(infer_hdmil(bag, dmin, lipn, h, costs));
}
BENCHMARK(BM_CascadeInference)->Arg(256)->Arg(2048);

}  // namespace

BENCHMARK_MAIN();
