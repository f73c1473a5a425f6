#include "ceval/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "ceval/rng.hpp"

namespace ceval {

int Dataset::num_classes() const {
    int m = 0;
    for (int l : labels) m = std::max(m, l + 1);
    return m;
}

namespace {

constexpr uint32_t kImagesMagic = 0x00000803;
constexpr uint32_t kLabelsMagic = 0x00000801;

struct ByteReader {
    std::vector<unsigned char> bytes;
    size_t pos = 0;
    std::string path;

    explicit ByteReader(const std::string& p) : path(p) {
        std::ifstream f(p, std::ios::binary);
        if (!f) throw IoError("cannot open '" + p + "'");
        bytes.assign(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
    }

    uint32_t u32be() {
        if (pos + 4 > bytes.size())
            throw IoError("'" + path + "': truncated at byte offset " + std::to_string(pos));
        uint32_t v = (uint32_t(bytes[pos]) << 24) | (uint32_t(bytes[pos + 1]) << 16) |
                     (uint32_t(bytes[pos + 2]) << 8) | uint32_t(bytes[pos + 3]);
        pos += 4;
        return v;
    }

    const unsigned char* payload(size_t n) {
        if (pos + n > bytes.size())
            throw IoError("'" + path + "': truncated payload at byte offset " +
                          std::to_string(bytes.size()) + " (need " + std::to_string(pos + n) +
                          " bytes)");
        const unsigned char* p = bytes.data() + pos;
        pos += n;
        return p;
    }
};

void put_u32be(std::ofstream& f, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
    f.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
    ByteReader img(images_path);
    uint32_t magic = img.u32be();
    if (magic != kImagesMagic) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "0x%08x", magic);
        throw IoError("'" + images_path + "': bad magic " + buf + " at byte offset 0");
    }
    uint32_t count = img.u32be();
    uint32_t rows = img.u32be();
    uint32_t cols = img.u32be();
    const unsigned char* px = img.payload(size_t(count) * rows * cols);

    ByteReader lab(labels_path);
    uint32_t lmagic = lab.u32be();
    if (lmagic != kLabelsMagic) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "0x%08x", lmagic);
        throw IoError("'" + labels_path + "': bad magic " + buf + " at byte offset 0");
    }
    uint32_t lcount = lab.u32be();
    if (lcount != count)
        throw IoError("count mismatch: " + images_path + " has " + std::to_string(count) +
                      " images, " + labels_path + " has " + std::to_string(lcount) + " labels");
    const unsigned char* lb = lab.payload(lcount);

    Dataset d;
    d.name = "idx";
    d.split = "unknown";
    d.images.reserve(count);
    d.labels.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
        Tensor t({1, int64_t(rows), int64_t(cols)});
        const unsigned char* src = px + size_t(i) * rows * cols;
        for (size_t j = 0; j < size_t(rows) * cols; ++j)
            t[static_cast<int64_t>(j)] = double(src[j]) / 255.0;
        d.images.push_back(std::move(t));
        d.labels.push_back(int(lb[i]));
    }
    return d;
}

void write_idx(const Dataset& d, const std::string& images_path, const std::string& labels_path) {
    if (d.size() == 0) throw PreconditionError("write_idx: empty dataset");
    const Shape& s = d.images.front().shape;
    if (s.size() != 3 || s[0] != 1)
        throw PreconditionError("write_idx: expects [1,H,W] images, got " + shape_str(s));
    int64_t rows = s[1], cols = s[2];

    std::ofstream fi(images_path, std::ios::binary);
    if (!fi) throw IoError("cannot open '" + images_path + "' for writing");
    put_u32be(fi, kImagesMagic);
    put_u32be(fi, uint32_t(d.size()));
    put_u32be(fi, uint32_t(rows));
    put_u32be(fi, uint32_t(cols));
    for (const auto& img : d.images) {
        if (img.shape != s) throw PreconditionError("write_idx: inconsistent image shapes");
        for (int64_t j = 0; j < img.size(); ++j) {
            double v = std::min(1.0, std::max(0.0, img[j]));
            unsigned char b = static_cast<unsigned char>(std::lround(v * 255.0));
            fi.write(reinterpret_cast<const char*>(&b), 1);
        }
    }

    std::ofstream fl(labels_path, std::ios::binary);
    if (!fl) throw IoError("cannot open '" + labels_path + "' for writing");
    put_u32be(fl, kLabelsMagic);
    put_u32be(fl, uint32_t(d.size()));
    for (int l : d.labels) {
        unsigned char b = static_cast<unsigned char>(l);
        fl.write(reinterpret_cast<const char*>(&b), 1);
    }
}

Dataset make_gaussian_blobs(int64_t n_dims, int n_classes, int64_t n_per_class, double separation,
                            uint64_t seed) {
    if (!(separation > 0.0)) throw PreconditionError("make_gaussian_blobs: separation must be > 0");
    if (n_classes < 2) throw PreconditionError("make_gaussian_blobs: need at least 2 classes");
    if (n_dims < 1 || n_per_class < 1)
        throw PreconditionError("make_gaussian_blobs: bad dimensions");
    Rng rng(seed);
    Dataset d;
    d.name = "blobs";
    d.split = "train";
    // Squeeze [0, separation] + noise into [0,1] so separation keeps its
    // meaning as class distance in units of noise sigma.
    double scale = 0.7 / (separation + 3.0);
    for (int c = 0; c < n_classes; ++c) {
        int64_t axis = c % n_dims;
        for (int64_t i = 0; i < n_per_class; ++i) {
            Tensor x({n_dims});
            for (int64_t j = 0; j < n_dims; ++j) {
                double raw = (j == axis ? separation : 0.0) + rng.normal();
                x[j] = std::min(1.0, std::max(0.0, 0.15 + scale * raw));
            }
            d.images.push_back(std::move(x));
            d.labels.push_back(c);
        }
    }
    return d;
}

namespace {

struct Glyph {
    // Polylines in a [0,1]x[0,1] box, y growing downward.
    std::vector<std::vector<std::pair<double, double>>> strokes;
};

std::vector<std::pair<double, double>> arc(double cx, double cy, double rx, double ry, double a0,
                                           double a1, int pts) {
    std::vector<std::pair<double, double>> out;
    for (int i = 0; i <= pts; ++i) {
        double a = a0 + (a1 - a0) * double(i) / double(pts);
        out.push_back({cx + rx * std::cos(a), cy + ry * std::sin(a)});
    }
    return out;
}

const std::vector<Glyph>& digit_glyphs() {
    static const std::vector<Glyph> glyphs = [] {
        std::vector<Glyph> g(10);
        const double pi = M_PI;
        g[0].strokes = {arc(0.5, 0.5, 0.32, 0.42, 0, 2 * pi, 16)};
        g[1].strokes = {{{0.35, 0.25}, {0.55, 0.08}, {0.55, 0.92}},
                        {{0.35, 0.92}, {0.75, 0.92}}};
        g[2].strokes = {[&] {
            auto a = arc(0.5, 0.28, 0.3, 0.22, -pi, 0.35, 10);
            a.push_back({0.2, 0.92});
            a.push_back({0.8, 0.92});
            return a;
        }()};
        g[3].strokes = {arc(0.48, 0.28, 0.3, 0.21, -pi, 0.5 * pi, 10),
                        arc(0.48, 0.71, 0.32, 0.23, -0.5 * pi, pi, 10)};
        g[4].strokes = {{{0.62, 0.08}, {0.18, 0.62}, {0.85, 0.62}}, {{0.62, 0.08}, {0.62, 0.92}}};
        g[5].strokes = {[&] {
            std::vector<std::pair<double, double>> a{{0.78, 0.08}, {0.25, 0.08}, {0.22, 0.45}};
            auto tail = arc(0.47, 0.66, 0.3, 0.26, -0.9 * pi, 0.75 * pi, 12);
            a.insert(a.end(), tail.begin(), tail.end());
            return a;
        }()};
        g[6].strokes = {[&] {
            auto a = arc(0.52, 0.3, 0.3, 0.26, -0.25 * pi, -pi, 8);
            auto body = arc(0.5, 0.68, 0.28, 0.24, -pi, pi, 14);
            a.insert(a.end(), body.begin(), body.end());
            return a;
        }()};
        g[7].strokes = {{{0.2, 0.1}, {0.8, 0.1}, {0.42, 0.92}}};
        g[8].strokes = {arc(0.5, 0.3, 0.26, 0.2, 0, 2 * pi, 12),
                        arc(0.5, 0.71, 0.3, 0.22, 0, 2 * pi, 12)};
        g[9].strokes = {[&] {
            auto a = arc(0.5, 0.32, 0.28, 0.24, 0, 2 * pi, 14);
            a.push_back({0.78, 0.32});
            a.push_back({0.66, 0.92});
            return a;
        }()};
        return g;
    }();
    return glyphs;
}

double dist_to_segment(double px, double py, double ax, double ay, double bx, double by) {
    double vx = bx - ax, vy = by - ay;
    double wx = px - ax, wy = py - ay;
    double vv = vx * vx + vy * vy;
    double t = vv > 0 ? std::min(1.0, std::max(0.0, (wx * vx + wy * vy) / vv)) : 0.0;
    double dx = px - (ax + t * vx), dy = py - (ay + t * vy);
    return std::sqrt(dx * dx + dy * dy);
}

}  // namespace

Dataset make_synthetic_digits(int64_t count, uint64_t seed, const std::string& split) {
    if (count < 1) throw PreconditionError("make_synthetic_digits: count must be >= 1");
    const int64_t H = 28, W = 28;
    const auto& glyphs = digit_glyphs();
    Dataset d;
    d.name = "digits";
    d.split = split;
    d.images.reserve(static_cast<size_t>(count));
    for (int64_t i = 0; i < count; ++i) {
        Rng rng = Rng::stream(seed, static_cast<uint64_t>(i));
        int digit = static_cast<int>(rng.uniform_int(10));
        double cx = 13.5 + rng.uniform(-5.0, 5.0);
        double cy = 13.5 + rng.uniform(-4.0, 4.0);
        double sc = 20.0 * rng.uniform(0.72, 1.02);
        double rot = rng.uniform(-0.2, 0.2);
        double shear = rng.uniform(-0.18, 0.18);
        double thick = rng.uniform(1.3, 2.1);
        double gain = rng.uniform(0.82, 1.0);
        double cr = std::cos(rot), sr = std::sin(rot);

        // Transform glyph points into canvas coordinates.
        std::vector<std::vector<std::pair<double, double>>> strokes;
        for (const auto& s : glyphs[static_cast<size_t>(digit)].strokes) {
            std::vector<std::pair<double, double>> t;
            t.reserve(s.size());
            for (auto [gx, gy] : s) {
                double ux = (gx - 0.5 + shear * (0.5 - gy)) * sc * 0.78;
                double uy = (gy - 0.5) * sc;
                t.push_back({cx + cr * ux - sr * uy, cy + sr * ux + cr * uy});
            }
            strokes.push_back(std::move(t));
        }

        Tensor img({1, H, W});
        for (int64_t r = 0; r < H; ++r)
            for (int64_t c = 0; c < W; ++c) {
                double best = 1e9;
                for (const auto& s : strokes)
                    for (size_t k = 0; k + 1 < s.size(); ++k)
                        best = std::min(best, dist_to_segment(double(c), double(r), s[k].first,
                                                              s[k].second, s[k + 1].first,
                                                              s[k + 1].second));
                double v = gain / (1.0 + std::exp((best - thick) / 0.45));
                v += 0.025 * rng.normal();
                img[r * W + c] = std::min(1.0, std::max(0.0, v));
            }
        d.images.push_back(std::move(img));
        d.labels.push_back(digit);
    }
    return d;
}

Dataset sample(const Dataset& d, int64_t count, uint64_t seed) {
    if (count > d.size())
        throw PreconditionError("sample: count " + std::to_string(count) + " exceeds dataset size " +
                                std::to_string(d.size()));
    std::vector<int64_t> idx(static_cast<size_t>(d.size()));
    for (int64_t i = 0; i < d.size(); ++i) idx[static_cast<size_t>(i)] = i;
    Rng rng(seed);
    // Partial Fisher-Yates, then restore original order.
    for (int64_t i = 0; i < count; ++i) {
        int64_t j = i + rng.uniform_int(d.size() - i);
        std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
    }
    idx.resize(static_cast<size_t>(count));
    std::sort(idx.begin(), idx.end());
    Dataset out;
    out.name = d.name;
    out.split = d.split;
    for (int64_t i : idx) {
        out.images.push_back(d.images[static_cast<size_t>(i)]);
        out.labels.push_back(d.labels[static_cast<size_t>(i)]);
    }
    return out;
}

}  // namespace ceval
