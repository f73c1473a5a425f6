#include <doctest.h>

#include <cmath>

#include "ceval/attack.hpp"
#include "ceval/dataset.hpp"
#include "ceval/train.hpp"
#include "ceval/oracle.hpp"
#include "ceval/rng.hpp"

using namespace ceval;

namespace {

// f_A(x) = x1 + x2, f_B(x) = 0, evaluated at x = (1, 1)
AffineInstance two_feature_example() {
    AffineInstance inst;
    inst.W = Tensor({2, 2}, {1, 1, 0, 0});
    inst.b = Tensor({2});
    inst.x = Tensor({2}, {1, 1});
    inst.j0 = 0;
    return inst;
}

}  // namespace

TEST_CASE("hand-computed projections") {
    AffineInstance inst = two_feature_example();
    CHECK(oracle_ceval(inst, Mask::none(2)) == doctest::Approx(std::sqrt(2.0)).epsilon(1e-12));
    CHECK(oracle_ceval(inst, Mask::from_indices({0}, 2)) == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(oracle_ceval(inst, Mask::from_indices({1}, 2)) == doctest::Approx(2.0).epsilon(1e-12));

    // harmonic identity: 1/2^2 + 1/2^2 = 1/(sqrt 2)^2
    double c0 = oracle_ceval(inst, Mask::none(2));
    double c1 = oracle_ceval(inst, Mask::from_indices({0}, 2));
    double c2 = oracle_ceval(inst, Mask::from_indices({1}, 2));
    CHECK(1.0 / (c1 * c1) + 1.0 / (c2 * c2) == doctest::Approx(1.0 / (c0 * c0)).epsilon(1e-12));

    CHECK(std::isinf(oracle_ceval(inst, Mask::all_frozen(2))));
}

TEST_CASE("oracle minimizer reaches the boundary") {
    AffineInstance inst = two_feature_example();
    Tensor d = oracle_minimizer(inst, Mask::none(2));
    CHECK(l2_norm(d) == doctest::Approx(std::sqrt(2.0)).epsilon(1e-12));
    // on the hyperplane, logits are equal
    double fa = (inst.x[0] + d[0]) + (inst.x[1] + d[1]);
    CHECK(fa == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("make_random_affine: deterministic, valid invariants") {
    AffineInstance a = make_random_affine(20, 5, 7);
    AffineInstance b = make_random_affine(20, 5, 7);
    CHECK(a.W.data == b.W.data);
    CHECK(a.x.data == b.x.data);
    CHECK(a.j0 == b.j0);

    // j0 is the argmax: every margin is non-negative
    for (int64_t j = 0; j < 5; ++j) {
        double margin = a.b[a.j0] - a.b[j];
        for (int64_t i = 0; i < 20; ++i)
            margin += (a.W[a.j0 * 20 + i] - a.W[j * 20 + i]) * a.x[i];
        CHECK(margin >= 0.0);
    }
    CHECK_THROWS_AS(make_random_affine(20, 1, 7), PreconditionError);
}

TEST_CASE("restriction monotonicity over 1000 random instances") {
    Rng rng(99);
    for (int trial = 0; trial < 1000; ++trial) {
        int64_t n = 4 + rng.uniform_int(12);
        int64_t m = 2 + rng.uniform_int(4);
        AffineInstance inst = make_random_affine(n, m, 40000 + trial);
        std::vector<int64_t> frozen;
        for (int64_t i = 0; i < n; ++i)
            if (rng.uniform() < 0.4) frozen.push_back(i);
        double c_free = oracle_ceval(inst, Mask::none(n));
        double c_restricted = oracle_ceval(inst, Mask::from_indices(frozen, n));
        CHECK(c_free <= c_restricted + 1e-12);
    }
}

TEST_CASE("harmonic identity is exact for 2-class instances") {
    Rng rng(123);
    for (int trial = 0; trial < 500; ++trial) {
        int64_t n = 3 + rng.uniform_int(15);
        AffineInstance inst = make_random_affine(n, 2, 50000 + trial);
        std::vector<int64_t> part;
        for (int64_t i = 0; i < n; ++i)
            if (rng.uniform() < 0.5) part.push_back(i);
        if (part.empty() || static_cast<int64_t>(part.size()) == n) continue;
        std::vector<int64_t> complement;
        for (int64_t i = 0; i < n; ++i)
            if (std::find(part.begin(), part.end(), i) == part.end()) complement.push_back(i);
        double c0 = oracle_ceval(inst, Mask::none(n));
        double c1 = oracle_ceval(inst, Mask::from_indices(part, n));
        double c2 = oracle_ceval(inst, Mask::from_indices(complement, n));
        double lhs = 1.0 / (c0 * c0);
        double rhs = 1.0 / (c1 * c1) + 1.0 / (c2 * c2);
        CHECK(std::abs(lhs - rhs) / lhs < 1e-9);
    }
}

TEST_CASE("brute force tracks the oracle from above") {
    for (uint64_t seed = 0; seed < 10; ++seed) {
        AffineInstance inst = make_random_affine(6, 2, 60000 + seed, 0.3, 0.7);
        Classifier m = to_classifier(inst);
        Mask mask = Mask::from_indices({0, 1, 2, 3}, 6);  // 2 free dims
        double exact = oracle_ceval(inst, mask);
        if (!std::isfinite(exact)) continue;
        // keep the minimizer interior so the box clamp stays inactive
        Tensor d = oracle_minimizer(inst, mask);
        bool interior = true;
        for (int64_t i = 0; i < 6; ++i) {
            double v = inst.x[i] + d[i];
            if (v < 0.02 || v > 0.98) interior = false;
        }
        if (!interior) continue;
        double approx = brute_force_ceval(m, inst.x, mask, 2.0, 10000, 1);
        CHECK(approx >= exact - 1e-9);
        CHECK(approx <= 1.01 * exact);
    }
}

TEST_CASE("brute force guard rails") {
    AffineInstance inst = make_random_affine(8, 2, 61000, 0.3, 0.7);
    Classifier m = to_classifier(inst);
    CHECK_THROWS_AS(brute_force_ceval(m, inst.x, Mask::all_frozen(8), 2.0, 100, 1), NoFlipFound);
    CHECK_THROWS_AS(brute_force_ceval(m, inst.x, Mask::none(8), 2.0, 100, 1), PreconditionError);
    // tiny radius: no flip found
    AffineInstance far_inst = two_feature_example();
    Classifier fm = to_classifier(far_inst);
    CHECK_THROWS_AS(brute_force_ceval(fm, far_inst.x, Mask::none(2), 0.05, 100, 1), NoFlipFound);
}

TEST_CASE("tiny mlp: brute force does not beat cw by more than tolerance") {
    // 2-input, 2-class MLP trained on blobs so the boundary crosses the box
    Dataset data = make_gaussian_blobs(2, 2, 40, 6.0, 9);
    Classifier m = Classifier::mlp({2}, {6}, 2);
    m.init_weights(33);
    TrainConfig tc;
    tc.epochs = 20;
    tc.batch_size = 10;
    tc.lr = 5e-3;
    tc.seed = 2;
    train(m, data, tc);
    Tensor x = data.images[0];
    REQUIRE(predict(m, x).second == data.labels[0]);
    Mask mask = Mask::none(2);
    AttackConfig cw;
    cw.cw.binary_search_steps = 8;
    cw.cw.max_iters = 600;
    cw.cw.adam_lr = 1e-2;
    double cw_norm = attack_cw(m, x, mask, cw).l2_norm;
    double bf = brute_force_ceval(m, x, mask, 3.0, 10000, 2);
    CHECK(bf >= cw_norm * 0.95);
}

TEST_CASE("two-feature example from a model round-trip") {
    AffineInstance inst = two_feature_example();
    Classifier m = to_classifier(inst);
    AffineInstance back = to_affine_instance(m, inst.x);
    CHECK(back.W.data == inst.W.data);
    CHECK(back.b.data == inst.b.data);
    CHECK(back.j0 == inst.j0);
}
