#include <benchmark/benchmark.h>

#include "ceval/attack.hpp"
#include "ceval/dataset.hpp"
#include "ceval/explain.hpp"
#include "ceval/metric.hpp"
#include "ceval/model.hpp"
#include "ceval/oracle.hpp"

using namespace ceval;

namespace {

Classifier make_mlp() {
    Classifier m = Classifier::mlp({1, 28, 28}, {128}, 10);
    m.init_weights(1);
    return m;
}

Tensor digit() { return make_synthetic_digits(1, 5).images[0]; }

}  // namespace

static void BM_MlpForward(benchmark::State& state) {
    Classifier m = make_mlp();
    ModelRuntime rt(m);
    Tensor x = digit();
    for (auto _ : state) {
        benchmark::DoNotOptimize(rt.logits(x));
    }
}
BENCHMARK(BM_MlpForward);

static void BM_MlpLossGrad(benchmark::State& state) {
    Classifier m = make_mlp();
    ModelRuntime rt(m);
    Tensor x = digit();
    for (auto _ : state) {
        benchmark::DoNotOptimize(rt.loss_and_input_grad(x, 3));
    }
}
BENCHMARK(BM_MlpLossGrad);

static void BM_LenetForward(benchmark::State& state) {
    Classifier m = Classifier::lenet_lite({1, 28, 28}, 10);
    m.init_weights(2);
    ModelRuntime rt(m);
    Tensor x = digit();
    for (auto _ : state) {
        benchmark::DoNotOptimize(rt.logits(x));
    }
}
BENCHMARK(BM_LenetForward);

static void BM_OracleCeval(benchmark::State& state) {
    AffineInstance inst = make_random_affine(20, 5, 3, 0.2, 0.8);
    Mask mask = Mask::none(20);
    for (auto _ : state) {
        benchmark::DoNotOptimize(oracle_ceval(inst, mask));
    }
}
BENCHMARK(BM_OracleCeval);

static void BM_GsaAttackAffine(benchmark::State& state) {
    AffineInstance inst = make_random_affine(20, 5, 4, 0.2, 0.8);
    Classifier m = to_classifier(inst);
    AttackConfig cfg;
    cfg.backend = AttackBackend::Gsa;
    for (auto _ : state) {
        benchmark::DoNotOptimize(attack_gsa(m, inst.x, Mask::none(20), cfg));
    }
}
BENCHMARK(BM_GsaAttackAffine);

static void BM_CwAttackAffine(benchmark::State& state) {
    AffineInstance inst = make_random_affine(20, 5, 5, 0.2, 0.8);
    Classifier m = to_classifier(inst);
    AttackConfig cfg;
    cfg.cw.binary_search_steps = 4;
    cfg.cw.max_iters = 200;
    cfg.cw.adam_lr = 1e-2;
    for (auto _ : state) {
        benchmark::DoNotOptimize(attack_cw(m, inst.x, Mask::none(20), cfg));
    }
}
BENCHMARK(BM_CwAttackAffine);

static void BM_LimeExplain(benchmark::State& state) {
    Classifier m = make_mlp();
    Tensor x = digit();
    SegmentMap seg = grid_segment({1, 28, 28}, 7, 7);
    for (auto _ : state) {
        benchmark::DoNotOptimize(explain_lime(m, x, seg, 100, 1));
    }
}
BENCHMARK(BM_LimeExplain);

BENCHMARK_MAIN();
