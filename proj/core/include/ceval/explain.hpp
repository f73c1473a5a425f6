#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ceval/model.hpp"
#include "ceval/tensor.hpp"

namespace ceval {

// One ranking weight per input feature. Ranking weights are non-negative
// (absolute values); signed attributions, when an explainer produces them,
// are kept alongside.
struct ImportanceMap {
    Tensor weights;
    Tensor signed_weights;  // empty when the explainer has no signed form
    std::string explainer_id;
    std::map<std::string, std::string> params;
};

struct SegmentMap {
    std::vector<int32_t> assignment;  // feature index -> segment id
    int32_t num_segments = 0;

    std::vector<std::vector<int64_t>> members() const;
};

enum class Granularity { Pixel, Segment };

// Ordered subset of feature indices (non-increasing importance, ties broken
// by lowest index) under a compactness budget k.
struct Explanation {
    std::vector<int64_t> feature_indices;
    int64_t k = 0;  // == feature_indices.size()
    std::string source;
    Granularity granularity = Granularity::Pixel;
    std::optional<SegmentMap> segmentation;
    std::map<std::string, std::string> metadata;

    bool covers_all(int64_t n) const { return k == n; }
};

// |d logit_l / d x| per feature, l the predicted label.
ImportanceMap explain_gradient(const Classifier& model, const Tensor& x);

// |x_i * d logit_l / d x_i|.
ImportanceMap explain_grad_times_input(const Classifier& model, const Tensor& x);

// Right-endpoint path integral with `steps` interpolations from baseline to x.
// Signed attributions sum to logit_l(x) - logit_l(baseline) exactly for affine
// models.
ImportanceMap explain_integrated_gradients(const Classifier& model, const Tensor& x,
                                           const Tensor& baseline, int steps);

// Ridge-regression surrogate over random binary segment masks (off segments
// replaced by `fill`; 0.0 matches a black image background), weighted by an
// exponential kernel on the cosine distance between the mask and the full
// image. Per-segment coefficients are broadcast to member features.
// Reproducible given (seed, num_samples), and the first masks of a longer run
// are a prefix of a shorter run's masks.
ImportanceMap explain_lime(const Classifier& model, const Tensor& x, const SegmentMap& seg,
                           int num_samples, uint64_t seed, double fill = 0.0);

// Held-out R^2 of the surrogate against fresh masks; used to inspect
// under-sampling.
double lime_heldout_r2(const Classifier& model, const Tensor& x, const SegmentMap& seg,
                       int num_samples, uint64_t seed, int heldout_samples, uint64_t heldout_seed,
                       double fill = 0.0);

enum class DummyKind { CenterSquare, Random, Border };

// Region masks used as baseline explanations: weight 1 inside the region and
// 0 outside (center square sized to the default 10% budget; border is the
// outermost frame). Random assigns i.i.d. uniform weights.
ImportanceMap explain_dummy(const Shape& input_shape, DummyKind kind, uint64_t seed = 0);

// k highest-weight features, ties by lowest index; k = 0 is the empty
// explanation. Throws PreconditionError when k > n.
Explanation top_k(const ImportanceMap& importance, int64_t k);

// Sum weights per segment; explanation covers all features of the k_segments
// top segments (ties by lowest segment id).
Explanation aggregate_to_segments(const ImportanceMap& importance, const SegmentMap& seg,
                                  int64_t k_segments);

// Largest prefix of the segment ranking whose feature count stays within
// k_features; the achieved count is recorded in metadata["achieved_k"].
Explanation segment_budget_explanation(const ImportanceMap& importance, const SegmentMap& seg,
                                       int64_t k_features);

// Rectangular tiling; remainder rows/cols are absorbed by the last tile in
// each direction. Flat inputs are treated as 1 x n images.
SegmentMap grid_segment(const Shape& input_shape, int64_t rows, int64_t cols);

}  // namespace ceval
