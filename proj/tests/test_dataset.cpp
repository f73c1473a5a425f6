#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <unistd.h>

#include "ceval/dataset.hpp"
#include "ceval/rng.hpp"

using namespace ceval;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("ceval_test_" + std::to_string(::getpid()) + "_" +
                                            std::to_string(counter()++));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    static int& counter() {
        static int c = 0;
        return c;
    }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

Dataset quantized_random_dataset(int64_t count, uint64_t seed) {
    Rng rng(seed);
    Dataset d;
    d.name = "synthetic";
    d.split = "train";
    for (int64_t i = 0; i < count; ++i) {
        Tensor t({1, 6, 7});
        for (auto& v : t.data) v = static_cast<double>(rng.uniform_int(256)) / 255.0;
        d.images.push_back(std::move(t));
        d.labels.push_back(static_cast<int>(rng.uniform_int(10)));
    }
    return d;
}

}  // namespace

TEST_CASE("idx round-trip recovers identical tensors") {
    TempDir tmp;
    Dataset d = quantized_random_dataset(25, 99);
    write_idx(d, tmp.file("img.idx"), tmp.file("lab.idx"));
    Dataset back = load_idx(tmp.file("img.idx"), tmp.file("lab.idx"));
    REQUIRE(back.size() == d.size());
    for (int64_t i = 0; i < d.size(); ++i) {
        CHECK(back.images[i].shape == d.images[i].shape);
        CHECK(back.images[i].data == d.images[i].data);
        CHECK(back.labels[i] == d.labels[i]);
    }
    for (const auto& img : back.images)
        for (double v : img.data) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
}

TEST_CASE("idx bad magic reports offset") {
    TempDir tmp;
    Dataset d = quantized_random_dataset(2, 1);
    write_idx(d, tmp.file("img.idx"), tmp.file("lab.idx"));
    // corrupt the images magic to 0x00000802
    std::fstream f(tmp.file("img.idx"), std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(3);
    char b = 0x02;
    f.write(&b, 1);
    f.close();
    try {
        load_idx(tmp.file("img.idx"), tmp.file("lab.idx"));
        FAIL("expected IoError");
    } catch (const IoError& e) {
        std::string msg = e.what();
        CHECK(msg.find("bad magic") != std::string::npos);
        CHECK(msg.find("0x00000802") != std::string::npos);
    }
}

TEST_CASE("idx truncation and count mismatch") {
    TempDir tmp;
    Dataset d = quantized_random_dataset(4, 2);
    write_idx(d, tmp.file("img.idx"), tmp.file("lab.idx"));

    // truncate the image payload
    fs::resize_file(tmp.file("img.idx"), 40);
    CHECK_THROWS_AS(load_idx(tmp.file("img.idx"), tmp.file("lab.idx")), IoError);

    // labels file shorter than images
    write_idx(d, tmp.file("img.idx"), tmp.file("lab.idx"));
    Dataset fewer = quantized_random_dataset(3, 2);
    write_idx(fewer, tmp.file("img2.idx"), tmp.file("lab2.idx"));
    try {
        load_idx(tmp.file("img.idx"), tmp.file("lab2.idx"));
        FAIL("expected IoError");
    } catch (const IoError& e) {
        CHECK(std::string(e.what()).find("count mismatch") != std::string::npos);
    }
}

TEST_CASE("gaussian blobs determinism and ranges") {
    Dataset a = make_gaussian_blobs(4, 3, 20, 8.0, 5);
    Dataset b = make_gaussian_blobs(4, 3, 20, 8.0, 5);
    REQUIRE(a.size() == 60);
    CHECK(a.labels == b.labels);
    for (int64_t i = 0; i < a.size(); ++i) CHECK(a.images[i].data == b.images[i].data);
    for (const auto& img : a.images)
        for (double v : img.data) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
    CHECK_THROWS_AS(make_gaussian_blobs(4, 1, 10, 5.0, 0), PreconditionError);
    CHECK_THROWS_AS(make_gaussian_blobs(4, 3, 10, 0.0, 0), PreconditionError);
}

TEST_CASE("synthetic digits: deterministic, balanced enough, in range") {
    Dataset a = make_synthetic_digits(200, 3);
    Dataset b = make_synthetic_digits(200, 3);
    REQUIRE(a.size() == 200);
    CHECK(a.labels == b.labels);
    for (int64_t i = 0; i < a.size(); ++i) CHECK(a.images[i].data == b.images[i].data);
    std::vector<int> counts(10, 0);
    for (int l : a.labels) {
        REQUIRE(l >= 0);
        REQUIRE(l < 10);
        counts[l] += 1;
    }
    for (int c : counts) CHECK(c > 5);
    for (const auto& img : a.images) {
        CHECK(img.shape == Shape{1, 28, 28});
        for (double v : img.data) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
    }
    // different seeds give different images
    Dataset c = make_synthetic_digits(10, 4);
    bool any_diff = false;
    for (int64_t i = 0; i < 10; ++i)
        if (c.images[i].data != a.images[i].data) any_diff = true;
    CHECK(any_diff);
}

TEST_CASE("sample: identity, determinism, edge cases") {
    Dataset d = quantized_random_dataset(30, 8);
    Dataset all = sample(d, 30, 123);
    CHECK(all.labels == d.labels);
    for (int64_t i = 0; i < d.size(); ++i) CHECK(all.images[i].data == d.images[i].data);

    Dataset s1 = sample(d, 10, 7);
    Dataset s2 = sample(d, 10, 7);
    CHECK(s1.labels == s2.labels);
    for (int64_t i = 0; i < s1.size(); ++i) CHECK(s1.images[i].data == s2.images[i].data);

    Dataset none = sample(d, 0, 7);
    CHECK(none.size() == 0);
    CHECK_THROWS_AS(sample(d, 31, 7), PreconditionError);
}
