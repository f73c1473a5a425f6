#include <doctest.h>

#include <cmath>

#include "ceval/graph.hpp"
#include "ceval/rng.hpp"

using namespace ceval;

namespace {

Tensor random_tensor(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(s));
    for (auto& v : t.data) v = rng.uniform(lo, hi);
    return t;
}

}  // namespace

TEST_CASE("identity affine graph") {
    Graph g;
    NodeId x = g.input("x", {1, 2});
    NodeId W = g.param("W", Tensor({2, 2}, {1, 0, 0, 1}));
    NodeId b = g.param("b", Tensor({2}));
    g.set_output(g.add(g.matmul(x, W), b));
    Tensor out = g.forward({{"x", Tensor({1, 2}, {3, 4})}});
    CHECK(out[0] == 3.0);
    CHECK(out[1] == 4.0);
}

TEST_CASE("softmax of zeros is uniform and sums to one") {
    Graph g;
    NodeId x = g.input("x", {1, 2});
    g.set_output(g.softmax(x));
    Tensor out = g.forward({{"x", Tensor({1, 2}, {0, 0})}});
    CHECK(out[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(out[1] == doctest::Approx(0.5).epsilon(1e-12));

    // property: random logits in a training-realistic range
    Rng rng(11);
    Graph g2;
    NodeId z = g2.input("z", {1, 7});
    g2.set_output(g2.softmax(z));
    for (int trial = 0; trial < 200; ++trial) {
        Tensor out2 = g2.forward({{"z", random_tensor({1, 7}, rng, -15, 15)}});
        double sum = 0.0;
        for (double v : out2.data) {
            CHECK(v > 0.0);
            CHECK(v < 1.0);
            sum += v;
        }
        CHECK(std::abs(sum - 1.0) < 1e-9);
    }
}

TEST_CASE("relu clamps negatives") {
    Graph g;
    NodeId x = g.input("x", {2});
    g.set_output(g.relu(x));
    Tensor out = g.forward({{"x", Tensor({2}, {-1, 2})}});
    CHECK(out[0] == 0.0);
    CHECK(out[1] == 2.0);
}

TEST_CASE("x squared has gradient 2x") {
    Graph g;
    NodeId x = g.input("x", {1});
    g.set_output(g.mul(x, x));
    g.forward({{"x", Tensor({1}, {3})}});
    auto grads = g.backward(Tensor({1}, {1}));
    CHECK(grads.at("x")[0] == doctest::Approx(6.0).epsilon(1e-12));
}

TEST_CASE("cross-entropy of softmax at zero logits") {
    Graph g;
    NodeId z = g.input("z", {1, 2});
    NodeId y = g.input("y", {1, 2});
    g.set_output(g.cross_entropy(z, y));
    Tensor loss = g.forward({{"z", Tensor({1, 2}, {0, 0})}, {"y", Tensor({1, 2}, {1, 0})}});
    CHECK(loss[0] == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    auto grads = g.backward(Tensor({1}, {1}));
    CHECK(grads.at("z")[0] == doctest::Approx(-0.5).epsilon(1e-12));
    CHECK(grads.at("z")[1] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("backward before forward is an error") {
    Graph g;
    NodeId x = g.input("x", {1});
    g.set_output(g.relu(x));
    CHECK_THROWS_AS(g.backward(Tensor({1}, {1})), PreconditionError);
}

TEST_CASE("shape mismatch names the offending node") {
    Graph g;
    NodeId x = g.input("x", {1, 3});
    NodeId W = g.param("W", Tensor({2, 2}, {1, 0, 0, 1}));
    try {
        g.matmul(x, W, "clf");
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        CHECK(std::string(e.what()).find("clf") != std::string::npos);
    }

    Graph g2;
    NodeId x2 = g2.input("x", {1, 3});
    g2.set_output(g2.relu(x2));
    CHECK_THROWS_AS(g2.forward({{"x", Tensor({1, 2}, {0, 0})}}), ShapeError);
}

TEST_CASE("finite differences: linear graph is exact") {
    Graph g;
    NodeId x = g.input("x", {1, 4});
    NodeId W = g.param("W", Tensor({4, 3}));
    NodeId b = g.param("b", Tensor({3}));
    Rng rng(5);
    for (auto& v : g.param_value("W").data) v = rng.normal();
    for (auto& v : g.param_value("b").data) v = rng.normal();
    g.set_output(g.add(g.matmul(x, W), b));
    double err = finite_diff_check(g, {{"x", random_tensor({1, 4}, rng)}}, 1e-5);
    CHECK(err < 1e-8);
    CHECK_THROWS_AS(finite_diff_check(g, {{"x", random_tensor({1, 4}, rng)}}, 0.0),
                    PreconditionError);
}

TEST_CASE("finite differences across the full op set") {
    // conv -> relu -> maxpool -> flatten -> fc -> tanh mix -> softmax -> CE
    Rng rng(17);
    Graph g;
    NodeId x = g.input("x", {1, 2, 8, 8});
    NodeId w1 = g.param("w1", random_tensor({3, 2, 3, 3}, rng, -0.5, 0.5));
    NodeId b1 = g.param("b1", random_tensor({3}, rng, -0.1, 0.1));
    NodeId c1 = g.conv2d(x, w1, b1, Padding::Same);
    NodeId p1 = g.maxpool2(g.relu(c1));
    NodeId flat = g.flatten(p1);
    NodeId w2 = g.param("w2", random_tensor({48, 5}, rng, -0.4, 0.4));
    NodeId b2 = g.param("b2", random_tensor({5}, rng, -0.1, 0.1));
    NodeId h = g.tanh(g.add(g.matmul(flat, w2), b2));
    NodeId w3 = g.param("w3", random_tensor({5, 4}, rng, -0.6, 0.6));
    NodeId y = g.input("y", {1, 4});
    g.set_output(g.cross_entropy(g.matmul(h, w3), y));

    Tensor target({1, 4});
    target[2] = 1.0;
    for (int trial = 0; trial < 5; ++trial) {
        std::map<std::string, Tensor> at{{"x", random_tensor({1, 2, 8, 8}, rng, 0.0, 1.0)},
                                         {"y", target}};
        double err = finite_diff_check(g, at, 1e-5, {"x", "w1", "b1", "w2", "b2", "w3"}, 40,
                                       900 + static_cast<uint64_t>(trial));
        CHECK(err < 1e-4);
    }
}

TEST_CASE("valid-padding conv output and gradient") {
    Rng rng(23);
    Graph g;
    NodeId x = g.input("x", {1, 1, 5, 5});
    NodeId w = g.param("w", random_tensor({2, 1, 3, 3}, rng));
    NodeId b = g.param("b", random_tensor({2}, rng));
    g.set_output(g.conv2d(x, w, b, Padding::Valid));
    CHECK(g.shape_of(g.output()) == Shape{1, 2, 3, 3});
    double err = finite_diff_check(g, {{"x", random_tensor({1, 1, 5, 5}, rng)}}, 1e-5);
    CHECK(err < 1e-7);
}

TEST_CASE("forward and backward are deterministic bit for bit") {
    Rng rng(31);
    Graph g;
    NodeId x = g.input("x", {1, 6});
    NodeId W = g.param("W", random_tensor({6, 4}, rng));
    NodeId b = g.param("b", random_tensor({4}, rng));
    g.set_output(g.softmax(g.add(g.matmul(x, W), b)));
    Tensor point = random_tensor({1, 6}, rng);
    Tensor o1 = g.forward({{"x", point}});
    auto g1 = g.backward(full({1, 4}, 1.0));
    Tensor o2 = g.forward({{"x", point}});
    auto g2 = g.backward(full({1, 4}, 1.0));
    CHECK(o1.data == o2.data);
    CHECK(g1.at("x").data == g2.at("x").data);
    CHECK(g1.at("W").data == g2.at("W").data);
}
