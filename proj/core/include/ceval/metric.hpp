#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ceval/attack.hpp"
#include "ceval/dataset.hpp"
#include "ceval/explain.hpp"
#include "ceval/model.hpp"
#include "ceval/oracle.hpp"

namespace ceval {

enum class MetricBackend { Gsa, Iga, Cw, Oracle };

std::string metric_backend_tag(MetricBackend b);
MetricBackend metric_backend_from_tag(const std::string& tag);

struct BackendConfig {
    MetricBackend kind = MetricBackend::Cw;
    AttackConfig attack;
};

struct CEvalResult {
    double c_value = 0.0;  // +inf when the explanation covers every feature
    std::optional<double> normalized;
    std::optional<double> c_empty;
    std::string backend;
    Explanation explanation;
    int iterations = 0;
};

struct CEvalPoint {
    int64_t k = 0;
    double c_value = 0.0;
    bool ok = true;
    std::string note;  // failure reason for gaps
};

struct CEvalPlot {
    std::vector<CEvalPoint> points;  // k strictly increasing
    std::string explainer_id;
    std::string input_id;
    // indices of points whose value dips below an earlier point (only
    // possible with approximate backends; flagged, not hidden)
    std::vector<int64_t> monotonicity_violations;
};

struct NearAffineRow {
    int64_t k = 0;
    double c1 = 0.0;     // c(e)
    double c2 = 0.0;     // c(x \ e)
    double c0 = 0.0;     // c(empty), computed directly
    double c_est = 0.0;  // harmonic estimate of c(empty)
    double rel_dev = 0.0;
    bool ok = true;
    std::string note;
};

struct NearAffineReport {
    std::vector<NearAffineRow> rows;
    double max_rel_dev = 0.0;
};

// Minimum distortion restricted to the explanation's complement. +inf when
// the explanation covers all features; AttackFailed surfaces as
// MetricUnavailable (never silently mapped to +inf).
CEvalResult compute_ceval(const Classifier& model, const Tensor& x, const Explanation& e,
                          const BackendConfig& cfg);

// Computes c(e) and c(empty) with the same backend and shares the baseline
// run when e is itself empty, so the ratio is exactly 1 there.
CEvalResult compute_normalized(const Classifier& model, const Tensor& x, const Explanation& e,
                               const BackendConfig& cfg);

// Metric at each prefix top_k(importance, k). Per-point failures are recorded
// as gaps rather than aborting the sweep.
CEvalPlot ceval_plot(const Classifier& model, const Tensor& x, const ImportanceMap& importance,
                     const std::vector<int64_t>& k_list, const BackendConfig& cfg,
                     int workers = 1);

// Harmonic-identity diagnostic: c_est = 1/sqrt(1/c1^2 + 1/c2^2) vs the
// directly computed c(empty). Rows where e or its complement would be empty
// are skipped with a note. No verdict threshold; the report carries the
// deviations.
NearAffineReport near_affine_check(const Classifier& model, const Tensor& x,
                                   const ImportanceMap& importance,
                                   const std::vector<int64_t>& k_list, const BackendConfig& cfg);

// Standard Pearson r. Requires equal lengths >= 2 and nonzero variance.
double pearson(const std::vector<double>& xs, const std::vector<double>& ys);

struct NamedExplainer {
    std::string id;
    // importance for one input; k is the pixel budget (used by segment-based
    // explainers to trim the segment prefix)
    std::function<Explanation(const Classifier&, const Tensor& x, int64_t k)> make;
};

struct RankRow {
    std::string explainer;
    double mean_C = 0.0;
    double median_C = 0.0;
    double q1 = 0.0;
    double q3 = 0.0;
    int n = 0;
    int skipped = 0;
    std::vector<double> values;  // per-image normalized metric, image order
};

// Normalized metric distribution per explainer over a dataset sample.
// k = ceil(k_fraction * n_features). Images whose attacks fail are skipped
// and counted. The unconstrained baseline run is shared across explainers for
// each image.
std::vector<RankRow> rank_explainers(const Classifier& model, const Dataset& data,
                                     const std::vector<NamedExplainer>& explainers,
                                     double k_fraction, const BackendConfig& cfg, int workers = 1);

double quantile(std::vector<double> values, double q);

}  // namespace ceval
