#include "ceval/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ceval/rng.hpp"

namespace ceval {

AffineInstance make_random_affine(int64_t n, int64_t m, uint64_t seed, double x_lo, double x_hi) {
    if (n < 2 || m < 2) throw PreconditionError("make_random_affine: need n >= 2 and m >= 2");
    Rng rng(seed);
    AffineInstance inst;
    inst.W = Tensor({m, n});
    inst.b = Tensor({m});
    inst.x = Tensor({n});
    for (auto& v : inst.W.data) v = rng.normal();
    for (auto& v : inst.b.data) v = rng.normal();
    for (auto& v : inst.x.data) v = rng.uniform(x_lo, x_hi);
    Tensor logits({m});
    for (int64_t j = 0; j < m; ++j) {
        double acc = inst.b[j];
        for (int64_t i = 0; i < n; ++i) acc += inst.W[j * n + i] * inst.x[i];
        logits[j] = acc;
    }
    inst.j0 = static_cast<int>(argmax_index(logits));
    return inst;
}

AffineInstance to_affine_instance(const Classifier& model, const Tensor& x) {
    if (model.arch != Arch::Affine)
        throw PreconditionError("to_affine_instance: model is not affine");
    const Tensor& W = model.weights.at("W");  // [n, m], input-major
    const Tensor& b = model.weights.at("b");
    int64_t n = W.shape[0], m = W.shape[1];
    if (x.size() != n) throw ShapeError("to_affine_instance: input size mismatch");
    AffineInstance inst;
    inst.W = Tensor({m, n});
    inst.b = b;
    inst.x = reshaped(x, {n});
    for (int64_t j = 0; j < m; ++j)
        for (int64_t i = 0; i < n; ++i) inst.W[j * n + i] = W[i * m + j];
    Tensor logits({m});
    for (int64_t j = 0; j < m; ++j) {
        double acc = inst.b[j];
        for (int64_t i = 0; i < n; ++i) acc += inst.W[j * n + i] * inst.x[i];
        logits[j] = acc;
    }
    inst.j0 = static_cast<int>(argmax_index(logits));
    return inst;
}

Classifier to_classifier(const AffineInstance& inst) {
    int64_t n = inst.n(), m = inst.m();
    Classifier c = Classifier::affine(n, static_cast<int>(m));
    Tensor& W = c.weights["W"];  // [n, m]
    for (int64_t j = 0; j < m; ++j)
        for (int64_t i = 0; i < n; ++i) W[i * m + j] = inst.W[j * n + i];
    c.weights["b"] = inst.b;
    return c;
}

namespace {

struct OracleSolution {
    double value = std::numeric_limits<double>::infinity();
    int64_t best_j = -1;
    double margin = 0.0;
    double norm2 = 0.0;  // squared norm of the restricted normal
};

OracleSolution solve(const AffineInstance& inst, const Mask& frozen) {
    int64_t n = inst.n(), m = inst.m();
    if (static_cast<int64_t>(frozen.frozen.size()) != n)
        throw ShapeError("oracle_ceval: mask size mismatch");
    OracleSolution sol;
    if (frozen.free_count == 0) return sol;
    for (int64_t j = 0; j < m; ++j) {
        if (j == inst.j0) continue;
        double margin = inst.b[inst.j0] - inst.b[j];
        double norm2 = 0.0;
        for (int64_t i = 0; i < n; ++i) {
            double diff = inst.W[inst.j0 * n + i] - inst.W[j * n + i];
            margin += diff * inst.x[i];
            if (!frozen.is_frozen(i)) norm2 += diff * diff;
        }
        if (norm2 == 0.0) continue;  // restricted program infeasible for this hyperplane
        double c = margin / std::sqrt(norm2);
        if (c < sol.value) {
            sol.value = c;
            sol.best_j = j;
            sol.margin = margin;
            sol.norm2 = norm2;
        }
    }
    return sol;
}

}  // namespace

double oracle_ceval(const AffineInstance& inst, const Mask& frozen) {
    return solve(inst, frozen).value;
}

Tensor oracle_minimizer(const AffineInstance& inst, const Mask& frozen) {
    OracleSolution sol = solve(inst, frozen);
    Tensor delta(inst.x.shape);
    if (sol.best_j < 0) return delta;
    int64_t n = inst.n();
    for (int64_t i = 0; i < n; ++i) {
        if (frozen.is_frozen(i)) continue;
        double v = inst.W[sol.best_j * n + i] - inst.W[inst.j0 * n + i];
        delta[i] = sol.margin * v / sol.norm2;
    }
    return delta;
}

double brute_force_ceval(const Classifier& model, const Tensor& x, const Mask& frozen,
                         double radius_max, int64_t samples, uint64_t seed) {
    int64_t n = x.size();
    if (static_cast<int64_t>(frozen.frozen.size()) != n)
        throw ShapeError("brute_force_ceval: mask size mismatch");
    if (frozen.free_count == 0) throw NoFlipFound("brute_force_ceval: every feature frozen");
    if (frozen.free_count > 3 && samples < 100000)
        throw PreconditionError("brute_force_ceval: free_count > 3 requires samples >= 100000");
    if (!(radius_max > 0.0)) throw PreconditionError("brute_force_ceval: radius_max must be > 0");

    std::vector<int64_t> free_idx;
    for (int64_t i = 0; i < n; ++i)
        if (!frozen.is_frozen(i)) free_idx.push_back(i);

    ModelRuntime rt(model);
    int l0 = rt.label(x);

    Tensor probe = x;
    auto flips_at = [&](const std::vector<double>& dir, double t, double& achieved_norm) {
        for (size_t j = 0; j < free_idx.size(); ++j) {
            double v = x[free_idx[j]] + t * dir[j];
            probe[free_idx[j]] = std::min(1.0, std::max(0.0, v));
        }
        bool flipped = rt.label(probe) != l0;
        if (flipped) achieved_norm = l2_dist(probe, x);
        return flipped;
    };

    Rng rng(seed);
    double best = std::numeric_limits<double>::infinity();
    std::vector<double> dir(free_idx.size());

    auto search_direction = [&]() {
        double norm_at_max = 0.0;
        if (!flips_at(dir, radius_max, norm_at_max)) return;
        double lo = 0.0, hi = radius_max;
        double best_here = norm_at_max;
        for (int it = 0; it < 48; ++it) {
            double mid = (lo + hi) / 2.0;
            double norm_mid = 0.0;
            if (flips_at(dir, mid, norm_mid)) {
                hi = mid;
                best_here = norm_mid;
            } else {
                lo = mid;
            }
        }
        best = std::min(best, best_here);
    };

    // axis-aligned directions first
    for (size_t j = 0; j < free_idx.size(); ++j) {
        for (double s : {1.0, -1.0}) {
            std::fill(dir.begin(), dir.end(), 0.0);
            dir[j] = s;
            search_direction();
        }
    }
    for (int64_t s = 0; s < samples; ++s) {
        double norm2 = 0.0;
        for (auto& d : dir) {
            d = rng.normal();
            norm2 += d * d;
        }
        if (norm2 == 0.0) continue;
        double inv = 1.0 / std::sqrt(norm2);
        for (auto& d : dir) d *= inv;
        search_direction();
    }
    if (!std::isfinite(best))
        throw NoFlipFound("brute_force_ceval: no label flip within radius " +
                          std::to_string(radius_max));
    return best;
}

}  // namespace ceval
