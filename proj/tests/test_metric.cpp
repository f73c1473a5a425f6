#include <doctest.h>

#include <cmath>

#include "ceval/dataset.hpp"
#include "ceval/metric.hpp"
#include "ceval/oracle.hpp"
#include "ceval/report.hpp"
#include "ceval/train.hpp"
#include "ceval/rng.hpp"

using namespace ceval;

namespace {

BackendConfig oracle_backend() {
    BackendConfig cfg;
    cfg.kind = MetricBackend::Oracle;
    return cfg;
}

BackendConfig cw_backend() {
    BackendConfig cfg;
    cfg.kind = MetricBackend::Cw;
    cfg.attack.cw.binary_search_steps = 6;
    cfg.attack.cw.max_iters = 400;
    cfg.attack.cw.adam_lr = 1e-2;
    cfg.attack.cw.targeted_sweep = true;  // oracle comparisons need the true minimum
    return cfg;
}

// f_A(x) = x1 + x2, f_B = 0 at x = (1, 1)
AffineInstance two_feature_example() {
    AffineInstance inst;
    inst.W = Tensor({2, 2}, {1, 1, 0, 0});
    inst.b = Tensor({2});
    inst.x = Tensor({2}, {1, 1});
    inst.j0 = 0;
    return inst;
}

ImportanceMap uniform_importance(int64_t n) {
    ImportanceMap imp;
    imp.weights = full({n}, 1.0);
    imp.explainer_id = "uniform";
    return imp;
}

}  // namespace

TEST_CASE("full-input explanation is infinite") {
    AffineInstance inst = two_feature_example();
    Classifier m = to_classifier(inst);
    ImportanceMap imp = uniform_importance(2);
    CEvalResult r = compute_ceval(m, inst.x, top_k(imp, 2), oracle_backend());
    CHECK(std::isinf(r.c_value));
    std::string json = ceval_result_to_json(r);
    CHECK(json.find("\"inf\"") != std::string::npos);
}

TEST_CASE("empty explanation equals the unconstrained minimum and normalizes to 1") {
    AffineInstance inst = two_feature_example();
    Classifier m = to_classifier(inst);
    ImportanceMap imp = uniform_importance(2);
    CEvalResult r = compute_normalized(m, inst.x, top_k(imp, 0), oracle_backend());
    CHECK(r.c_value == doctest::Approx(std::sqrt(2.0)).epsilon(1e-12));
    REQUIRE(r.normalized.has_value());
    CHECK(*r.normalized == 1.0);  // exactly, by shared run
}

TEST_CASE("normalized metric for the 2D hand example") {
    AffineInstance inst = two_feature_example();
    Classifier m = to_classifier(inst);
    ImportanceMap imp;
    imp.weights = tensor1d({1.0, 0.5});  // ranks x1 first
    CEvalResult r = compute_normalized(m, inst.x, top_k(imp, 1), oracle_backend());
    CHECK(r.c_value == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(*r.normalized == doctest::Approx(std::sqrt(2.0)).epsilon(1e-12));
}

TEST_CASE("cw backend tracks the oracle on an affine instance") {
    AffineInstance inst = make_random_affine(16, 4, 321, 0.25, 0.75);
    Mask none = Mask::none(16);
    Tensor d = oracle_minimizer(inst, none);
    for (int64_t i = 0; i < 16; ++i) {
        double v = inst.x[i] + d[i];
        if (v < 0.05 || v > 0.95) return;  // pick another seed if this triggers
    }
    Classifier m = to_classifier(inst);
    ImportanceMap imp = uniform_importance(16);
    double oracle = compute_ceval(m, inst.x, top_k(imp, 0), oracle_backend()).c_value;
    double cw = compute_ceval(m, inst.x, top_k(imp, 0), cw_backend()).c_value;
    CHECK(cw <= 1.05 * oracle);
    CHECK(cw >= oracle - 1e-9);
}

TEST_CASE("metric failures surface as MetricUnavailable, not infinity") {
    AffineInstance inst = two_feature_example();
    Classifier m = to_classifier(inst);
    ImportanceMap imp = uniform_importance(2);
    BackendConfig cramped;
    cramped.kind = MetricBackend::Gsa;
    cramped.attack.eps_schedule = {1e-9, 1.0000001, 3};  // cannot flip anything
    CHECK_THROWS_AS(compute_ceval(m, inst.x, top_k(imp, 0), cramped), MetricUnavailable);
}

TEST_CASE("ceval plot: base case, monotone under the oracle") {
    AffineInstance inst = make_random_affine(12, 3, 55, 0.2, 0.8);
    Classifier m = to_classifier(inst);
    ImportanceMap imp;
    imp.weights = Tensor({12});
    Rng rng(3);
    for (auto& v : imp.weights.data) v = rng.uniform();

    CEvalPlot single = ceval_plot(m, inst.x, imp, {0}, oracle_backend());
    REQUIRE(single.points.size() == 1);
    CHECK(single.points[0].c_value ==
          doctest::Approx(oracle_ceval(inst, Mask::none(12))).epsilon(1e-12));

    std::vector<int64_t> ks{0, 2, 4, 6, 8, 10};
    CEvalPlot plot = ceval_plot(m, inst.x, imp, ks, oracle_backend(), 2);
    REQUIRE(plot.points.size() == ks.size());
    for (size_t i = 0; i + 1 < plot.points.size(); ++i)
        CHECK(plot.points[i].c_value <= plot.points[i + 1].c_value + 1e-12);
    CHECK(plot.monotonicity_violations.empty());

    CHECK_THROWS_AS(ceval_plot(m, inst.x, imp, {4, 2}, oracle_backend()), PreconditionError);
}

TEST_CASE("near-affine check is exact for a single hyperplane") {
    AffineInstance inst = two_feature_example();
    Classifier m = to_classifier(inst);
    ImportanceMap imp;
    imp.weights = tensor1d({1.0, 0.5});
    NearAffineReport rep = near_affine_check(m, inst.x, imp, {1}, oracle_backend());
    REQUIRE(rep.rows.size() == 1);
    const NearAffineRow& row = rep.rows[0];
    CHECK(row.ok);
    CHECK(row.c1 == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(row.c2 == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(row.c_est == doctest::Approx(std::sqrt(2.0)).epsilon(1e-12));  // 1/sqrt(1/4 + 1/4)
    CHECK(row.rel_dev < 1e-9);

    // k that empties the complement is skipped with a note
    NearAffineReport skipped = near_affine_check(m, inst.x, imp, {2}, oracle_backend());
    REQUIRE(skipped.rows.size() == 1);
    CHECK(!skipped.rows[0].ok);
    CHECK(skipped.rows[0].note.find("skipped") != std::string::npos);
}

TEST_CASE("near-affine check exact across random 2-class instances") {
    for (uint64_t seed = 0; seed < 50; ++seed) {
        AffineInstance inst = make_random_affine(10, 2, 70000 + seed, 0.2, 0.8);
        Classifier m = to_classifier(inst);
        ImportanceMap imp;
        imp.weights = Tensor({10});
        Rng rng(seed);
        for (auto& v : imp.weights.data) v = rng.uniform();
        NearAffineReport rep = near_affine_check(m, inst.x, imp, {3, 5, 7}, oracle_backend());
        for (const auto& row : rep.rows) {
            REQUIRE(row.ok);
            CHECK(row.rel_dev < 1e-9);
        }
    }
}

TEST_CASE("pearson correlation") {
    CHECK(pearson({1, 2, 3}, {1, 2, 3}) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(pearson({1, 2, 3}, {3, 2, 1}) == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK_THROWS_AS(pearson({1, 2}, {1}), PreconditionError);
    CHECK_THROWS_AS(pearson({1}, {1}), PreconditionError);
    CHECK_THROWS_AS(pearson({2, 2, 2}, {1, 2, 3}), PreconditionError);

    // symmetry and affine invariance
    Rng rng(8);
    std::vector<double> xs, ys;
    for (int i = 0; i < 40; ++i) {
        xs.push_back(rng.normal());
        ys.push_back(rng.normal());
    }
    double r = pearson(xs, ys);
    CHECK(pearson(ys, xs) == doctest::Approx(r).epsilon(1e-12));
    std::vector<double> scaled;
    for (double v : xs) scaled.push_back(3.5 * v + 2.0);
    CHECK(pearson(scaled, ys) == doctest::Approx(r).epsilon(1e-12));
    std::vector<double> negated;
    for (double v : xs) negated.push_back(-2.0 * v + 1.0);
    CHECK(pearson(negated, ys) == doctest::Approx(-r).epsilon(1e-12));
}

TEST_CASE("rank_explainers consistency and budgets") {
    AffineInstance inst = make_random_affine(20, 3, 888, 0.25, 0.75);
    Classifier m = to_classifier(inst);
    Dataset data;
    data.images.push_back(inst.x);
    data.labels.push_back(inst.j0);

    int64_t seen_k = -1;
    NamedExplainer probe{"probe", [&](const Classifier&, const Tensor& x, int64_t k) {
                             seen_k = k;
                             ImportanceMap imp = uniform_importance(x.size());
                             return top_k(imp, k);
                         }};
    auto rows = rank_explainers(m, data, {probe}, 0.1, oracle_backend());
    REQUIRE(rows.size() == 1);
    CHECK(seen_k == 2);  // ceil(0.1 * 20)
    REQUIRE(rows[0].n == 1);

    ImportanceMap imp = uniform_importance(20);
    CEvalResult direct = compute_normalized(m, inst.x, top_k(imp, 2), oracle_backend());
    CHECK(rows[0].values[0] == doctest::Approx(*direct.normalized).epsilon(1e-12));

    CHECK_THROWS_AS(rank_explainers(m, data, {probe}, 0.0, oracle_backend()), PreconditionError);
    CHECK_THROWS_AS(rank_explainers(m, Dataset{}, {probe}, 0.1, oracle_backend()),
                    PreconditionError);
}

TEST_CASE("k fraction of a 28x28 image is 79 features") {
    ImportanceMap imp = uniform_importance(784);
    int64_t k = static_cast<int64_t>(std::ceil(0.1 * 784));
    CHECK(k == 79);
    CHECK(top_k(imp, k).k == 79);
}

TEST_CASE("near-affine diagnostic on a trained model reports finite deviations") {
    Dataset train_set = make_synthetic_digits(1500, 100);
    Classifier m = Classifier::mlp({1, 28, 28}, {64}, 10);
    m.init_weights(4);
    TrainConfig tc;
    tc.epochs = 3;
    tc.batch_size = 32;
    tc.lr = 2e-3;
    tc.seed = 8;
    train(m, train_set, tc);

    Dataset test_set = make_synthetic_digits(1, 321, "test");
    const Tensor& x = test_set.images[0];
    ImportanceMap imp = explain_gradient(m, x);
    BackendConfig iga;
    iga.kind = MetricBackend::Iga;
    NearAffineReport rep = near_affine_check(m, x, imp, {40, 80, 160}, iga);
    REQUIRE(rep.rows.size() == 3);
    // diagnostic only: deviations are reported, not thresholded
    for (const auto& row : rep.rows) {
        if (!row.ok) continue;
        CHECK(std::isfinite(row.c_est));
        CHECK(std::isfinite(row.rel_dev));
        CHECK(row.c_est > 0.0);
    }
    CHECK(std::isfinite(rep.max_rel_dev));
}
