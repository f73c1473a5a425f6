#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ceval/dataset.hpp"
#include "ceval/explain.hpp"
#include "ceval/rng.hpp"
#include "ceval/train.hpp"

using namespace ceval;

namespace {

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
    auto ranks = [](const std::vector<double>& v) {
        std::vector<int64_t> idx(v.size());
        std::iota(idx.begin(), idx.end(), 0);
        std::stable_sort(idx.begin(), idx.end(), [&](int64_t x, int64_t y) { return v[x] < v[y]; });
        std::vector<double> r(v.size());
        for (size_t i = 0; i < idx.size(); ++i) r[idx[i]] = static_cast<double>(i);
        return r;
    };
    std::vector<double> ra = ranks(a), rb = ranks(b);
    double ma = 0, mb = 0;
    for (size_t i = 0; i < ra.size(); ++i) {
        ma += ra[i];
        mb += rb[i];
    }
    ma /= ra.size();
    mb /= rb.size();
    double sxx = 0, syy = 0, sxy = 0;
    for (size_t i = 0; i < ra.size(); ++i) {
        sxy += (ra[i] - ma) * (rb[i] - mb);
        sxx += (ra[i] - ma) * (ra[i] - ma);
        syy += (rb[i] - mb) * (rb[i] - mb);
    }
    return sxy / std::sqrt(sxx * syy);
}

Classifier trained_digit_mlp() {
    Dataset train_set = make_synthetic_digits(2000, 100);
    Classifier m = Classifier::mlp({1, 28, 28}, {64}, 10);
    m.init_weights(4);
    TrainConfig cfg;
    cfg.epochs = 4;
    cfg.batch_size = 32;
    cfg.lr = 2e-3;
    cfg.seed = 8;
    train(m, train_set, cfg);
    return m;
}

}  // namespace

TEST_CASE("gradient explainer on affine models") {
    // logits z = W^T x; gradient of the predicted logit is W's column
    Classifier m = Classifier::affine(3, 2);
    m.weights["W"] = Tensor({3, 2}, {0.5, -1.0, -0.25, 0.0, 2.0, 0.5});
    Tensor x = tensor1d({0.9, 0.8, 0.7});
    auto [logits, label] = predict(m, x);
    (void)logits;
    ImportanceMap imp = explain_gradient(m, x);
    for (int64_t i = 0; i < 3; ++i)
        CHECK(imp.weights[i] ==
              doctest::Approx(std::abs(m.weights["W"][i * 2 + label])).epsilon(1e-12));

    Classifier zero = Classifier::affine(3, 2);  // W = 0 -> constant output
    ImportanceMap zimp = explain_gradient(zero, x);
    for (double v : zimp.weights.data) CHECK(v == 0.0);
}

TEST_CASE("gradient explainer on a trained MLP digit") {
    Classifier m = trained_digit_mlp();
    Dataset test_set = make_synthetic_digits(3, 200, "test");
    ImportanceMap imp = explain_gradient(m, test_set.images[0]);
    CHECK(imp.weights.shape == Shape{1, 28, 28});
    CHECK(imp.weights.all_finite());
}

TEST_CASE("gradient-times-input explainer") {
    Classifier m = Classifier::affine(2, 2);
    // choose weights so the predicted class gradient is (3, 4)
    m.weights["W"] = Tensor({2, 2}, {3.0, 0.0, 4.0, 0.0});
    Tensor x = tensor1d({1.0, 2.0});
    auto [logits, label] = predict(m, x);
    (void)logits;
    REQUIRE(label == 0);
    ImportanceMap imp = explain_grad_times_input(m, x);
    CHECK(imp.weights[0] == doctest::Approx(3.0));
    CHECK(imp.weights[1] == doctest::Approx(8.0));

    ImportanceMap at_zero = explain_grad_times_input(m, tensor1d({0.0, 0.0}));
    for (double v : at_zero.weights.data) CHECK(v == 0.0);

    // constant nonzero input: same ranking as the plain gradient
    Tensor xc = tensor1d({0.6, 0.6});
    Explanation a = top_k(explain_gradient(m, xc), 2);
    Explanation b = top_k(explain_grad_times_input(m, xc), 2);
    CHECK(a.feature_indices == b.feature_indices);
}

TEST_CASE("integrated gradients: exact completeness for affine models") {
    Rng rng(3);
    Classifier m = Classifier::affine(6, 3);
    for (auto& v : m.weights["W"].data) v = rng.normal();
    for (auto& v : m.weights["b"].data) v = rng.normal();
    Tensor x(Shape{6});
    for (auto& v : x.data) v = rng.uniform();
    Tensor baseline(Shape{6});
    for (auto& v : baseline.data) v = rng.uniform();

    ModelRuntime rt(m);
    auto [zx, label] = rt.predict(x);
    Tensor zb = rt.logits(baseline);
    ImportanceMap imp = explain_integrated_gradients(m, x, baseline, 4);
    double total = 0.0;
    for (double v : imp.signed_weights.data) total += v;
    CHECK(total == doctest::Approx(zx[label] - zb[label]).epsilon(1e-10));

    CHECK_THROWS_AS(explain_integrated_gradients(m, x, baseline, 0), PreconditionError);
    CHECK_THROWS_AS(explain_integrated_gradients(m, x, Tensor({5}), 4), ShapeError);
}

TEST_CASE("integrated gradients on an MLP: completeness and step stability") {
    Classifier m = trained_digit_mlp();
    Dataset test_set = make_synthetic_digits(2, 300, "test");
    const Tensor& x = test_set.images[0];
    Tensor baseline(x.shape);  // black image

    ModelRuntime rt(m);
    auto [zx, label] = rt.predict(x);
    Tensor zb = rt.logits(baseline);
    ImportanceMap imp = explain_integrated_gradients(m, x, baseline, 200);
    double total = 0.0;
    for (double v : imp.signed_weights.data) total += v;
    double target = zx[label] - zb[label];
    CHECK(std::abs(total - target) < 1e-2 * std::abs(zx[label]));

    ImportanceMap i5 = explain_integrated_gradients(m, x, baseline, 5);
    ImportanceMap i10 = explain_integrated_gradients(m, x, baseline, 10);
    CHECK(spearman(i5.weights.data, i10.weights.data) > 0.9);
}

TEST_CASE("lime finds the segment the model depends on") {
    // 4x4 single-channel image, 2x2 grid -> 4 segments of 4 pixels;
    // class-1 logit sums the pixels of segment 3 only
    Classifier m = Classifier::affine(16, 2);
    SegmentMap seg = grid_segment({1, 4, 4}, 2, 2);
    for (int64_t i = 0; i < 16; ++i)
        m.weights["W"][i * 2 + 1] = seg.assignment[static_cast<size_t>(i)] == 3 ? 4.0 : 0.0;
    m.weights["b"] = Tensor({2}, {1.0, -7.0});

    Tensor x({1, 4, 4});
    for (int64_t i = 0; i < 16; ++i)
        x[i] = seg.assignment[static_cast<size_t>(i)] == 3 ? 1.0 : 0.3;
    REQUIRE(predict(m, x).second == 1);

    ImportanceMap imp = explain_lime(m, x, seg, 120, 42);
    // the coefficient of segment 3 dominates; members of segment 3 rank first
    Explanation top = top_k(imp, 4);
    for (int64_t idx : top.feature_indices)
        CHECK(seg.assignment[static_cast<size_t>(idx)] == 3);

    CHECK_THROWS_AS(explain_lime(m, x, seg, 3, 42), PreconditionError);

    // reproducibility
    ImportanceMap again = explain_lime(m, x, seg, 120, 42);
    CHECK(again.weights.data == imp.weights.data);
}

TEST_CASE("lime surrogate improves with more samples") {
    Classifier m = trained_digit_mlp();
    Dataset test_set = make_synthetic_digits(1, 500, "test");
    const Tensor& x = test_set.images[0];
    SegmentMap seg = grid_segment({1, 28, 28}, 7, 7);
    double r2_small = lime_heldout_r2(m, x, seg, 60, 9, 300, 777);
    double r2_large = lime_heldout_r2(m, x, seg, 240, 9, 300, 777);
    CHECK(r2_large >= r2_small);
}

TEST_CASE("dummy explainers") {
    Shape shape{1, 28, 28};
    ImportanceMap center = explain_dummy(shape, DummyKind::CenterSquare);
    Explanation e = top_k(center, 78);  // 10% of 784
    // a centered block: all indices inside the centered 9x9 region
    int64_t side = 9, r0 = (28 - side) / 2, c0 = (28 - side) / 2;
    for (int64_t idx : e.feature_indices) {
        int64_t r = idx / 28, c = idx % 28;
        CHECK(r >= r0);
        CHECK(r < r0 + side);
        CHECK(c >= c0);
        CHECK(c < c0 + side);
    }

    ImportanceMap border = explain_dummy(shape, DummyKind::Border);
    Explanation be = top_k(border, 100);
    for (int64_t idx : be.feature_indices) {
        int64_t r = idx / 28, c = idx % 28;
        bool on_border = r == 0 || c == 0 || r == 27 || c == 27;
        CHECK(on_border);
    }

    ImportanceMap r1 = explain_dummy(shape, DummyKind::Random, 5);
    ImportanceMap r2 = explain_dummy(shape, DummyKind::Random, 5);
    CHECK(r1.weights.data == r2.weights.data);
    CHECK(top_k(r1, 78).feature_indices == top_k(r2, 78).feature_indices);
}

TEST_CASE("top_k ordering, ties, edges, nesting, scale invariance") {
    ImportanceMap imp;
    imp.weights = tensor1d({0.1, 0.9, 0.5});
    CHECK(top_k(imp, 2).feature_indices == std::vector<int64_t>{1, 2});

    ImportanceMap equal;
    equal.weights = tensor1d({0.3, 0.3, 0.3});
    CHECK(top_k(equal, 2).feature_indices == std::vector<int64_t>{0, 1});

    CHECK(top_k(imp, 0).feature_indices.empty());
    CHECK(top_k(imp, 0).k == 0);
    CHECK_THROWS_AS(top_k(imp, 4), PreconditionError);

    // properties over random maps
    Rng rng(77);
    for (int trial = 0; trial < 50; ++trial) {
        ImportanceMap w;
        w.weights = Tensor({12});
        for (auto& v : w.weights.data) v = rng.uniform();
        std::vector<int64_t> prev;
        for (int64_t k = 0; k <= 12; ++k) {
            auto cur = top_k(w, k).feature_indices;
            std::vector<int64_t> sorted_prev = prev, sorted_cur = cur;
            std::sort(sorted_prev.begin(), sorted_prev.end());
            std::sort(sorted_cur.begin(), sorted_cur.end());
            CHECK(std::includes(sorted_cur.begin(), sorted_cur.end(), sorted_prev.begin(),
                                sorted_prev.end()));
            prev = cur;
        }
        ImportanceMap scaled = w;
        for (auto& v : scaled.weights.data) v *= 37.5;
        CHECK(top_k(scaled, 5).feature_indices == top_k(w, 5).feature_indices);
    }
}

TEST_CASE("segment aggregation") {
    SegmentMap seg;
    seg.num_segments = 2;
    seg.assignment = {0, 0, 1, 1};
    ImportanceMap imp;
    imp.weights = tensor1d({0.5, 0.5, 0.8, 1.2});  // sums: (1.0, 2.0)
    Explanation e = aggregate_to_segments(imp, seg, 1);
    CHECK(e.feature_indices == std::vector<int64_t>{2, 3});
    CHECK(e.granularity == Granularity::Segment);

    ImportanceMap uniform;
    uniform.weights = tensor1d({1, 1, 1, 1});
    Explanation tie = aggregate_to_segments(uniform, seg, 1);
    CHECK(tie.feature_indices == std::vector<int64_t>{0, 1});  // segment 0 wins ties

    CHECK_THROWS_AS(aggregate_to_segments(imp, seg, 3), PreconditionError);

    // 4x4 grid on 28x28, k = 3 segments -> 3/16 of the features
    SegmentMap grid = grid_segment({1, 28, 28}, 4, 4);
    ImportanceMap rimp;
    rimp.weights = Tensor({1, 28, 28});
    Rng rng(12);
    for (auto& v : rimp.weights.data) v = rng.uniform();
    Explanation ge = aggregate_to_segments(rimp, grid, 3);
    CHECK(ge.k == 3 * 49);
}

TEST_CASE("segment budget explanation keeps the largest prefix under k") {
    SegmentMap seg;
    seg.num_segments = 3;
    seg.assignment = {0, 0, 0, 1, 1, 2};
    ImportanceMap imp;
    imp.weights = tensor1d({1, 1, 1, 5, 5, 0.1});  // segment sums: 3, 10, 0.1
    Explanation e = segment_budget_explanation(imp, seg, 4);
    // segment 1 (2 feats) fits; adding segment 0 (3 feats) would exceed 4
    CHECK(e.feature_indices == std::vector<int64_t>{3, 4});
    CHECK(e.metadata.at("achieved_k") == "2");
    CHECK(e.metadata.at("requested_k") == "4");
}

TEST_CASE("grid segmentation") {
    SegmentMap s100 = grid_segment({1, 28, 28}, 10, 10);
    CHECK(s100.num_segments == 100);

    SegmentMap s1 = grid_segment({1, 28, 28}, 1, 1);
    CHECK(s1.num_segments == 1);
    for (int32_t a : s1.assignment) CHECK(a == 0);

    SegmentMap s16 = grid_segment({1, 28, 28}, 4, 4);
    CHECK(s16.num_segments == 16);
    auto members = s16.members();
    for (const auto& m : members) CHECK(m.size() == 49);  // 7x7 tiles

    CHECK_THROWS_AS(grid_segment({1, 28, 28}, 29, 4), PreconditionError);
    CHECK_THROWS_AS(grid_segment({1, 28, 28}, 0, 4), PreconditionError);
}
