#include <doctest.h>

#include "ceval/rng.hpp"
#include "ceval/tensor.hpp"

using namespace ceval;

TEST_CASE("shape bookkeeping") {
    Tensor t({2, 3});
    CHECK(t.size() == 6);
    CHECK(t.rank() == 2);
    CHECK(t.all_finite());
    CHECK_THROWS_AS(Tensor({2, 3}, {1.0, 2.0}), ShapeError);
}

TEST_CASE("reshape preserves data and checks element count") {
    Tensor t = tensor1d({1, 2, 3, 4, 5, 6});
    Tensor r = reshaped(t, {2, 3});
    CHECK(r.at2(1, 2) == 6.0);
    CHECK_THROWS_AS(reshaped(t, {4, 2}), ShapeError);
}

TEST_CASE("norms and argmax tie-break") {
    Tensor a = tensor1d({3, 4});
    CHECK(l2_norm(a) == doctest::Approx(5.0));
    CHECK(l2_dist(a, tensor1d({0, 0})) == doctest::Approx(5.0));
    CHECK(argmax_index(tensor1d({2, 2})) == 0);  // lowest index wins ties
    CHECK(argmax_index(tensor1d({0, 1, 1})) == 1);
}

TEST_CASE("rng streams are deterministic and distinct") {
    Rng a(42), b(42), c(43);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
    bool differs = false;
    Rng a2(42);
    for (int i = 0; i < 10; ++i)
        if (a2.next_u64() != c.next_u64()) differs = true;
    CHECK(differs);
}

TEST_CASE("rng uniform and normal look sane") {
    Rng r(7);
    double sum = 0.0, sq = 0.0;
    const int N = 20000;
    for (int i = 0; i < N; ++i) {
        double u = r.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
        double z = r.normal();
        sum += z;
        sq += z * z;
    }
    CHECK(std::abs(sum / N) < 0.03);
    CHECK(std::abs(sq / N - 1.0) < 0.05);
}
