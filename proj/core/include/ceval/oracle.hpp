#pragma once

#include <cstdint>

#include "ceval/attack.hpp"
#include "ceval/model.hpp"
#include "ceval/tensor.hpp"

namespace ceval {

// Exact affine reference: W is [m, n] with one row per class (w_j), so the
// metric is min over j != j0 of margin_j / ||(w_j - w_j0) restricted to free
// coordinates||.
struct AffineInstance {
    Tensor W;  // [m, n]
    Tensor b;  // [m]
    Tensor x;  // [n]
    int j0 = 0;

    int64_t n() const { return W.shape[1]; }
    int64_t m() const { return W.shape[0]; }
};

// Gaussian W and b, x uniform in [x_lo, x_hi]^n, j0 = argmax(Wx + b).
// Deterministic by seed.
AffineInstance make_random_affine(int64_t n, int64_t m, uint64_t seed, double x_lo = 0.0,
                                  double x_hi = 1.0);

AffineInstance to_affine_instance(const Classifier& model, const Tensor& x);
Classifier to_classifier(const AffineInstance& inst);

// Exact restricted distance to the nearest decision hyperplane. Ignores the
// [0,1] box on purpose; hyperplanes with zero restricted normal are skipped
// and +inf is returned when every one is (or everything is frozen).
double oracle_ceval(const AffineInstance& inst, const Mask& frozen);

// The minimizing delta behind oracle_ceval (zero tensor when the value is
// +inf). Frozen coordinates are exactly zero.
Tensor oracle_minimizer(const AffineInstance& inst, const Mask& frozen);

// Sampled upper bound for small non-affine models: random unit directions in
// the free subspace (plus the axis-aligned ones), bisecting the smallest
// label-flipping scale. Points are clamped to the box before evaluation.
// free_count > 3 requires samples >= 100000 (tractability guard).
double brute_force_ceval(const Classifier& model, const Tensor& x, const Mask& frozen,
                         double radius_max, int64_t samples, uint64_t seed);

}  // namespace ceval
