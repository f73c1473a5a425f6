#include "ceval/explain.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ceval/rng.hpp"

namespace ceval {

std::vector<std::vector<int64_t>> SegmentMap::members() const {
    std::vector<std::vector<int64_t>> out(static_cast<size_t>(num_segments));
    for (size_t i = 0; i < assignment.size(); ++i) {
        int32_t s = assignment[i];
        if (s < 0 || s >= num_segments)
            throw PreconditionError("segment id " + std::to_string(s) + " outside [0, " +
                                    std::to_string(num_segments) + ")");
        out[static_cast<size_t>(s)].push_back(static_cast<int64_t>(i));
    }
    return out;
}

namespace {

ImportanceMap from_signed(Tensor signed_w, std::string id) {
    ImportanceMap m;
    m.signed_weights = signed_w;
    m.weights = std::move(signed_w);
    for (auto& v : m.weights.data) v = std::abs(v);
    m.explainer_id = std::move(id);
    return m;
}

}  // namespace

ImportanceMap explain_gradient(const Classifier& model, const Tensor& x) {
    ModelRuntime rt(model);
    auto [logits, label] = rt.predict(x);
    (void)logits;
    Tensor g = rt.logits_input_grad(x, onehot(label, model.num_classes));
    ImportanceMap m = from_signed(std::move(g), "gradient");
    m.params["label"] = std::to_string(label);
    return m;
}

ImportanceMap explain_grad_times_input(const Classifier& model, const Tensor& x) {
    ModelRuntime rt(model);
    auto [logits, label] = rt.predict(x);
    (void)logits;
    Tensor g = rt.logits_input_grad(x, onehot(label, model.num_classes));
    for (int64_t i = 0; i < g.size(); ++i) g[i] *= x[i];
    ImportanceMap m = from_signed(std::move(g), "gradxinput");
    m.params["label"] = std::to_string(label);
    return m;
}

ImportanceMap explain_integrated_gradients(const Classifier& model, const Tensor& x,
                                           const Tensor& baseline, int steps) {
    if (steps < 1) throw PreconditionError("integrated gradients: steps must be >= 1");
    if (!baseline.same_shape(x))
        throw ShapeError("integrated gradients: baseline shape " + shape_str(baseline.shape) +
                         " != input " + shape_str(x.shape));
    ModelRuntime rt(model);
    auto [logits, label] = rt.predict(x);
    (void)logits;
    Tensor seed = onehot(label, model.num_classes);
    Tensor mean_grad(x.shape);
    Tensor point(x.shape);
    for (int j = 1; j <= steps; ++j) {
        double a = static_cast<double>(j) / static_cast<double>(steps);
        for (int64_t i = 0; i < x.size(); ++i)
            point[i] = baseline[i] + a * (x[i] - baseline[i]);
        Tensor g = rt.logits_input_grad(point, seed);
        for (int64_t i = 0; i < x.size(); ++i) mean_grad[i] += g[i];
    }
    for (auto& v : mean_grad.data) v /= static_cast<double>(steps);
    Tensor attribution(x.shape);
    for (int64_t i = 0; i < x.size(); ++i)
        attribution[i] = (x[i] - baseline[i]) * mean_grad[i];
    ImportanceMap m = from_signed(std::move(attribution), "ig");
    m.params["steps"] = std::to_string(steps);
    m.params["label"] = std::to_string(label);
    return m;
}

namespace {

// Solves (A + ridge*I_masked) beta = rhs in place via Gaussian elimination
// with partial pivoting. A is dense symmetric positive definite here; plain
// pivoting keeps it simple and the systems are tiny (<= ~150 unknowns).
std::vector<double> solve_dense(std::vector<std::vector<double>> a, std::vector<double> rhs) {
    size_t n = rhs.size();
    for (size_t col = 0; col < n; ++col) {
        size_t piv = col;
        for (size_t r = col + 1; r < n; ++r)
            if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
        if (a[piv][col] == 0.0) throw PreconditionError("singular system in ridge solve");
        std::swap(a[piv], a[col]);
        std::swap(rhs[piv], rhs[col]);
        for (size_t r = col + 1; r < n; ++r) {
            double f = a[r][col] / a[col][col];
            if (f == 0.0) continue;
            for (size_t c = col; c < n; ++c) a[r][c] -= f * a[col][c];
            rhs[r] -= f * rhs[col];
        }
    }
    std::vector<double> x(n);
    for (size_t r = n; r-- > 0;) {
        double acc = rhs[r];
        for (size_t c = r + 1; c < n; ++c) acc -= a[r][c] * x[c];
        x[r] = acc / a[r][r];
    }
    return x;
}

struct LimeSurrogate {
    std::vector<double> coef;  // per segment
    double intercept = 0.0;
};

double lime_kernel_weight(int64_t on_count, int64_t num_segments) {
    // cosine distance between a binary mask and the all-ones mask
    double s = static_cast<double>(num_segments);
    double d = 1.0 - std::sqrt(static_cast<double>(on_count) / s);
    double width = 0.25 * std::sqrt(s);
    return std::exp(-(d * d) / (width * width));
}

Tensor apply_mask(const Tensor& x, const std::vector<uint8_t>& mask_on,
                  const std::vector<int32_t>& assignment, double fill) {
    Tensor out = x;
    for (int64_t i = 0; i < out.size(); ++i)
        if (!mask_on[static_cast<size_t>(assignment[static_cast<size_t>(i)])]) out[i] = fill;
    return out;
}

LimeSurrogate lime_fit(const Classifier& model, const Tensor& x, const SegmentMap& seg,
                       int num_samples, uint64_t seed, double fill) {
    int64_t S = seg.num_segments;
    if (num_samples < S)
        throw PreconditionError("explain_lime: num_samples " + std::to_string(num_samples) +
                                " < num_segments " + std::to_string(S));
    if (static_cast<int64_t>(seg.assignment.size()) != x.size())
        throw ShapeError("explain_lime: segmentation covers " +
                         std::to_string(seg.assignment.size()) + " features, input has " +
                         std::to_string(x.size()));
    ModelRuntime rt(model);
    auto [logits0, label] = rt.predict(x);
    (void)logits0;

    // masks drawn one sample at a time so a longer run extends a shorter one
    Rng rng(seed ^ 0x11225588ULL);
    int64_t dim = S + 1;  // intercept first
    std::vector<std::vector<double>> xtx(static_cast<size_t>(dim),
                                         std::vector<double>(static_cast<size_t>(dim), 0.0));
    std::vector<double> xty(static_cast<size_t>(dim), 0.0);
    std::vector<uint8_t> mask(static_cast<size_t>(S));
    std::vector<double> row(static_cast<size_t>(dim));
    for (int s = 0; s < num_samples; ++s) {
        int64_t on = 0;
        for (int64_t j = 0; j < S; ++j) {
            mask[static_cast<size_t>(j)] = rng.next_u64() & 1 ? 1 : 0;
            on += mask[static_cast<size_t>(j)];
        }
        Tensor masked = apply_mask(x, mask, seg.assignment, fill);
        Tensor z = rt.logits(masked);
        // target: softmax probability of the original label
        double mx = z[0];
        for (int64_t c = 1; c < z.size(); ++c) mx = std::max(mx, z[c]);
        double denom = 0.0;
        for (int64_t c = 0; c < z.size(); ++c) denom += std::exp(z[c] - mx);
        double prob = std::exp(z[label] - mx) / denom;

        double w = lime_kernel_weight(on, S);
        row[0] = 1.0;
        for (int64_t j = 0; j < S; ++j) row[static_cast<size_t>(j + 1)] = mask[static_cast<size_t>(j)];
        for (int64_t a = 0; a < dim; ++a) {
            if (row[static_cast<size_t>(a)] == 0.0) continue;
            double wa = w * row[static_cast<size_t>(a)];
            for (int64_t b = 0; b < dim; ++b)
                xtx[static_cast<size_t>(a)][static_cast<size_t>(b)] += wa * row[static_cast<size_t>(b)];
            xty[static_cast<size_t>(a)] += wa * prob;
        }
    }
    // ridge penalty on the segment coefficients, not the intercept
    for (int64_t j = 1; j < dim; ++j) xtx[static_cast<size_t>(j)][static_cast<size_t>(j)] += 1.0;
    std::vector<double> beta = solve_dense(std::move(xtx), std::move(xty));
    LimeSurrogate fit;
    fit.intercept = beta[0];
    fit.coef.assign(beta.begin() + 1, beta.end());
    return fit;
}

}  // namespace

ImportanceMap explain_lime(const Classifier& model, const Tensor& x, const SegmentMap& seg,
                           int num_samples, uint64_t seed, double fill) {
    LimeSurrogate fit = lime_fit(model, x, seg, num_samples, seed, fill);
    Tensor signed_w(x.shape);
    for (int64_t i = 0; i < x.size(); ++i)
        signed_w[i] = fit.coef[static_cast<size_t>(seg.assignment[static_cast<size_t>(i)])];
    ImportanceMap m = from_signed(std::move(signed_w), "lime");
    m.params["num_samples"] = std::to_string(num_samples);
    m.params["seed"] = std::to_string(seed);
    m.params["num_segments"] = std::to_string(seg.num_segments);
    m.params["fill"] = std::to_string(fill);
    return m;
}

double lime_heldout_r2(const Classifier& model, const Tensor& x, const SegmentMap& seg,
                       int num_samples, uint64_t seed, int heldout_samples, uint64_t heldout_seed,
                       double fill) {
    LimeSurrogate fit = lime_fit(model, x, seg, num_samples, seed, fill);
    ModelRuntime rt(model);
    auto [logits0, label] = rt.predict(x);
    (void)logits0;
    int64_t S = seg.num_segments;
    Rng rng(heldout_seed ^ 0x77441122ULL);
    std::vector<uint8_t> mask(static_cast<size_t>(S));
    std::vector<double> truth, pred;
    for (int s = 0; s < heldout_samples; ++s) {
        for (int64_t j = 0; j < S; ++j) mask[static_cast<size_t>(j)] = rng.next_u64() & 1 ? 1 : 0;
        Tensor masked = apply_mask(x, mask, seg.assignment, fill);
        Tensor z = rt.logits(masked);
        double mx = z[0];
        for (int64_t c = 1; c < z.size(); ++c) mx = std::max(mx, z[c]);
        double denom = 0.0;
        for (int64_t c = 0; c < z.size(); ++c) denom += std::exp(z[c] - mx);
        truth.push_back(std::exp(z[label] - mx) / denom);
        double p = fit.intercept;
        for (int64_t j = 0; j < S; ++j)
            if (mask[static_cast<size_t>(j)]) p += fit.coef[static_cast<size_t>(j)];
        pred.push_back(p);
    }
    double mean = std::accumulate(truth.begin(), truth.end(), 0.0) / truth.size();
    double ss_res = 0.0, ss_tot = 0.0;
    for (size_t i = 0; i < truth.size(); ++i) {
        ss_res += (truth[i] - pred[i]) * (truth[i] - pred[i]);
        ss_tot += (truth[i] - mean) * (truth[i] - mean);
    }
    if (ss_tot == 0.0) return ss_res == 0.0 ? 1.0 : 0.0;
    return 1.0 - ss_res / ss_tot;
}

ImportanceMap explain_dummy(const Shape& input_shape, DummyKind kind, uint64_t seed) {
    int64_t H = 1, W = 1;
    if (input_shape.size() == 1) {
        H = 1;
        W = input_shape[0];
    } else if (input_shape.size() == 3) {
        H = input_shape[1];
        W = input_shape[2];
    } else {
        throw ShapeError("explain_dummy: expects {n} or {C,H,W}");
    }
    int64_t C = input_shape.size() == 3 ? input_shape[0] : 1;
    ImportanceMap m;
    m.weights = Tensor(input_shape);
    auto set_all_channels = [&](int64_t r, int64_t c, double v) {
        for (int64_t ch = 0; ch < C; ++ch) m.weights[(ch * H + r) * W + c] = v;
    };
    switch (kind) {
        case DummyKind::CenterSquare: {
            // square sized to the default 10% budget
            int64_t side = std::max<int64_t>(
                1, static_cast<int64_t>(std::lround(std::sqrt(0.10 * static_cast<double>(H * W)))));
            int64_t r0 = (H - side) / 2, c0 = (W - side) / 2;
            for (int64_t r = r0; r < std::min(H, r0 + side); ++r)
                for (int64_t c = c0; c < std::min(W, c0 + side); ++c) set_all_channels(r, c, 1.0);
            m.explainer_id = "dummy-center";
            break;
        }
        case DummyKind::Border: {
            for (int64_t r = 0; r < H; ++r)
                for (int64_t c = 0; c < W; ++c)
                    if (r == 0 || c == 0 || r == H - 1 || c == W - 1) set_all_channels(r, c, 1.0);
            m.explainer_id = "dummy-border";
            break;
        }
        case DummyKind::Random: {
            Rng rng(seed);
            for (auto& v : m.weights.data) v = rng.uniform();
            m.explainer_id = "dummy-random";
            m.params["seed"] = std::to_string(seed);
            break;
        }
    }
    return m;
}

Explanation top_k(const ImportanceMap& importance, int64_t k) {
    int64_t n = importance.weights.size();
    if (k < 0 || k > n)
        throw PreconditionError("top_k: k " + std::to_string(k) + " outside [0, " +
                                std::to_string(n) + "]");
    std::vector<int64_t> idx(static_cast<size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](int64_t a, int64_t b) {
        double wa = importance.weights[a], wb = importance.weights[b];
        if (wa != wb) return wa > wb;
        return a < b;
    });
    Explanation e;
    e.feature_indices.assign(idx.begin(), idx.begin() + k);
    e.k = k;
    e.source = importance.explainer_id;
    return e;
}

namespace {

std::vector<int64_t> rank_segments(const ImportanceMap& importance, const SegmentMap& seg) {
    std::vector<double> sums(static_cast<size_t>(seg.num_segments), 0.0);
    if (static_cast<int64_t>(seg.assignment.size()) != importance.weights.size())
        throw ShapeError("segment map does not cover the importance map");
    for (int64_t i = 0; i < importance.weights.size(); ++i)
        sums[static_cast<size_t>(seg.assignment[static_cast<size_t>(i)])] += importance.weights[i];
    std::vector<int64_t> order(static_cast<size_t>(seg.num_segments));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
        if (sums[static_cast<size_t>(a)] != sums[static_cast<size_t>(b)])
            return sums[static_cast<size_t>(a)] > sums[static_cast<size_t>(b)];
        return a < b;
    });
    return order;
}

}  // namespace

Explanation aggregate_to_segments(const ImportanceMap& importance, const SegmentMap& seg,
                                  int64_t k_segments) {
    if (k_segments < 0 || k_segments > seg.num_segments)
        throw PreconditionError("aggregate_to_segments: budget " + std::to_string(k_segments) +
                                " exceeds segment count " + std::to_string(seg.num_segments));
    auto order = rank_segments(importance, seg);
    auto members = seg.members();
    Explanation e;
    for (int64_t s = 0; s < k_segments; ++s) {
        const auto& feats = members[static_cast<size_t>(order[static_cast<size_t>(s)])];
        e.feature_indices.insert(e.feature_indices.end(), feats.begin(), feats.end());
    }
    e.k = static_cast<int64_t>(e.feature_indices.size());
    e.source = importance.explainer_id;
    e.granularity = Granularity::Segment;
    e.segmentation = seg;
    e.metadata["segments"] = std::to_string(k_segments);
    return e;
}

Explanation segment_budget_explanation(const ImportanceMap& importance, const SegmentMap& seg,
                                       int64_t k_features) {
    if (k_features < 0 || k_features > importance.weights.size())
        throw PreconditionError("segment_budget_explanation: bad feature budget");
    auto order = rank_segments(importance, seg);
    auto members = seg.members();
    Explanation e;
    int64_t used_segments = 0;
    for (int64_t s = 0; s < seg.num_segments; ++s) {
        const auto& feats = members[static_cast<size_t>(order[static_cast<size_t>(s)])];
        if (static_cast<int64_t>(e.feature_indices.size() + feats.size()) > k_features) break;
        e.feature_indices.insert(e.feature_indices.end(), feats.begin(), feats.end());
        used_segments += 1;
    }
    e.k = static_cast<int64_t>(e.feature_indices.size());
    e.source = importance.explainer_id;
    e.granularity = Granularity::Segment;
    e.segmentation = seg;
    e.metadata["achieved_k"] = std::to_string(e.k);
    e.metadata["requested_k"] = std::to_string(k_features);
    e.metadata["segments"] = std::to_string(used_segments);
    return e;
}

SegmentMap grid_segment(const Shape& input_shape, int64_t rows, int64_t cols) {
    int64_t H, W, C;
    if (input_shape.size() == 1) {
        C = 1;
        H = 1;
        W = input_shape[0];
    } else if (input_shape.size() == 3) {
        C = input_shape[0];
        H = input_shape[1];
        W = input_shape[2];
    } else {
        throw ShapeError("grid_segment: expects {n} or {C,H,W}");
    }
    if (rows < 1 || cols < 1) throw PreconditionError("grid_segment: rows, cols must be >= 1");
    if (rows > H || cols > W)
        throw PreconditionError("grid_segment: grid " + std::to_string(rows) + "x" +
                                std::to_string(cols) + " larger than image " + std::to_string(H) +
                                "x" + std::to_string(W));
    int64_t th = H / rows, tw = W / cols;
    SegmentMap seg;
    seg.num_segments = static_cast<int32_t>(rows * cols);
    seg.assignment.resize(static_cast<size_t>(C * H * W));
    for (int64_t ch = 0; ch < C; ++ch)
        for (int64_t r = 0; r < H; ++r)
            for (int64_t c = 0; c < W; ++c) {
                int64_t tr = std::min(r / th, rows - 1);
                int64_t tc = std::min(c / tw, cols - 1);
                seg.assignment[static_cast<size_t>((ch * H + r) * W + c)] =
                    static_cast<int32_t>(tr * cols + tc);
            }
    return seg;
}

}  // namespace ceval
