#include "ceval/metric.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ceval/parallel.hpp"

namespace ceval {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double run_backend(const Classifier& model, const Tensor& x, const Mask& mask,
                   const BackendConfig& cfg, int* iterations) {
    if (cfg.kind == MetricBackend::Oracle) {
        AffineInstance inst = to_affine_instance(model, x);
        if (iterations) *iterations = 0;
        return oracle_ceval(inst, mask);
    }
    AttackConfig attack = cfg.attack;
    attack.backend = cfg.kind == MetricBackend::Gsa   ? AttackBackend::Gsa
                     : cfg.kind == MetricBackend::Iga ? AttackBackend::Iga
                                                      : AttackBackend::Cw;
    try {
        PerturbationResult r = run_attack(model, x, mask, attack);
        if (iterations) *iterations = r.iterations_used;
        return r.l2_norm;
    } catch (const AttackFailed& e) {
        throw MetricUnavailable(std::string("attack failed: ") + e.what());
    }
}

}  // namespace

std::string metric_backend_tag(MetricBackend b) {
    switch (b) {
        case MetricBackend::Gsa: return "gsa";
        case MetricBackend::Iga: return "iga";
        case MetricBackend::Cw: return "cw";
        case MetricBackend::Oracle: return "oracle";
    }
    return "?";
}

MetricBackend metric_backend_from_tag(const std::string& tag) {
    if (tag == "gsa") return MetricBackend::Gsa;
    if (tag == "iga") return MetricBackend::Iga;
    if (tag == "cw") return MetricBackend::Cw;
    if (tag == "oracle") return MetricBackend::Oracle;
    throw PreconditionError("unknown backend '" + tag + "'");
}

CEvalResult compute_ceval(const Classifier& model, const Tensor& x, const Explanation& e,
                          const BackendConfig& cfg) {
    CEvalResult out;
    out.backend = metric_backend_tag(cfg.kind);
    out.explanation = e;
    if (e.covers_all(x.size())) {
        out.c_value = kInf;  // no free feature; no perturbation scheme exists
        return out;
    }
    Mask mask = Mask::from_explanation(e, x.size());
    out.c_value = run_backend(model, x, mask, cfg, &out.iterations);
    return out;
}

CEvalResult compute_normalized(const Classifier& model, const Tensor& x, const Explanation& e,
                               const BackendConfig& cfg) {
    CEvalResult out = compute_ceval(model, x, e, cfg);
    if (e.k == 0) {
        // same run, shared by construction
        out.c_empty = out.c_value;
        out.normalized = 1.0;
        return out;
    }
    int iters = 0;
    double c0 = run_backend(model, x, Mask::none(x.size()), cfg, &iters);
    out.iterations += iters;
    out.c_empty = c0;
    out.normalized = out.c_value / c0;
    return out;
}

CEvalPlot ceval_plot(const Classifier& model, const Tensor& x, const ImportanceMap& importance,
                     const std::vector<int64_t>& k_list, const BackendConfig& cfg, int workers) {
    for (size_t i = 0; i + 1 < k_list.size(); ++i)
        if (k_list[i] >= k_list[i + 1])
            throw PreconditionError("ceval_plot: k_list must be strictly increasing");
    if (!k_list.empty() && (k_list.front() < 0 || k_list.back() > importance.weights.size()))
        throw PreconditionError("ceval_plot: k outside [0, n]");

    CEvalPlot plot;
    plot.explainer_id = importance.explainer_id;
    plot.points.resize(k_list.size());
    parallel_for(static_cast<int64_t>(k_list.size()), workers, [&](int64_t i) {
        int64_t k = k_list[static_cast<size_t>(i)];
        CEvalPoint& p = plot.points[static_cast<size_t>(i)];
        p.k = k;
        try {
            p.c_value = compute_ceval(model, x, top_k(importance, k), cfg).c_value;
        } catch (const MetricUnavailable& e) {
            p.ok = false;
            p.note = e.what();
        }
    });
    double running_max = -kInf;
    for (size_t i = 0; i < plot.points.size(); ++i) {
        if (!plot.points[i].ok) continue;
        if (plot.points[i].c_value < running_max - 1e-12)
            plot.monotonicity_violations.push_back(static_cast<int64_t>(i));
        running_max = std::max(running_max, plot.points[i].c_value);
    }
    return plot;
}

NearAffineReport near_affine_check(const Classifier& model, const Tensor& x,
                                   const ImportanceMap& importance,
                                   const std::vector<int64_t>& k_list, const BackendConfig& cfg) {
    NearAffineReport report;
    int iters = 0;
    double c0;
    try {
        c0 = run_backend(model, x, Mask::none(x.size()), cfg, &iters);
    } catch (const MetricUnavailable& e) {
        NearAffineRow row;
        row.ok = false;
        row.note = std::string("baseline failed: ") + e.what();
        report.rows.push_back(row);
        return report;
    }
    int64_t n = x.size();
    for (int64_t k : k_list) {
        NearAffineRow row;
        row.k = k;
        row.c0 = c0;
        if (k < 1 || k >= n) {
            row.ok = false;
            row.note = "skipped: explanation or complement would be empty";
            report.rows.push_back(row);
            continue;
        }
        Explanation e = top_k(importance, k);
        Mask m1 = Mask::from_explanation(e, n);
        // complement: freeze everything the explanation leaves free
        Mask m2 = Mask::none(n);
        m2.free_count = 0;
        for (int64_t i = 0; i < n; ++i) {
            m2.frozen[static_cast<size_t>(i)] = m1.frozen[static_cast<size_t>(i)] ? 0 : 1;
            if (!m2.frozen[static_cast<size_t>(i)]) m2.free_count += 1;
        }
        try {
            row.c1 = run_backend(model, x, m1, cfg, &iters);
            row.c2 = run_backend(model, x, m2, cfg, &iters);
            row.c_est = 1.0 / std::sqrt(1.0 / (row.c1 * row.c1) + 1.0 / (row.c2 * row.c2));
            row.rel_dev = std::abs(row.c_est - c0) / c0;
            report.max_rel_dev = std::max(report.max_rel_dev, row.rel_dev);
        } catch (const MetricUnavailable& e2) {
            row.ok = false;
            row.note = e2.what();
        }
        report.rows.push_back(row);
    }
    return report;
}

double pearson(const std::vector<double>& xs, const std::vector<double>& ys) {
    if (xs.size() != ys.size())
        throw PreconditionError("pearson: length mismatch");
    if (xs.size() < 2) throw PreconditionError("pearson: need at least 2 points");
    double mx = 0.0, my = 0.0;
    for (size_t i = 0; i < xs.size(); ++i) {
        mx += xs[i];
        my += ys[i];
    }
    mx /= static_cast<double>(xs.size());
    my /= static_cast<double>(ys.size());
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (size_t i = 0; i < xs.size(); ++i) {
        double dx = xs[i] - mx, dy = ys[i] - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if (sxx == 0.0 || syy == 0.0)
        throw PreconditionError("pearson: degenerate variance");
    return sxy / std::sqrt(sxx * syy);
}

double quantile(std::vector<double> values, double q) {
    if (values.empty()) throw PreconditionError("quantile of empty list");
    std::sort(values.begin(), values.end());
    double pos = q * static_cast<double>(values.size() - 1);
    size_t lo = static_cast<size_t>(pos);
    size_t hi = std::min(lo + 1, values.size() - 1);
    double frac = pos - static_cast<double>(lo);
    return values[lo] * (1.0 - frac) + values[hi] * frac;
}

std::vector<RankRow> rank_explainers(const Classifier& model, const Dataset& data,
                                     const std::vector<NamedExplainer>& explainers,
                                     double k_fraction, const BackendConfig& cfg, int workers) {
    if (!(k_fraction > 0.0 && k_fraction < 1.0))
        throw PreconditionError("rank_explainers: k_fraction must be in (0, 1)");
    if (data.size() == 0) throw PreconditionError("rank_explainers: empty sample");

    int64_t n_features = data.images.front().size();
    int64_t k = static_cast<int64_t>(std::ceil(k_fraction * static_cast<double>(n_features)));

    struct Cell {
        double value = 0.0;
        bool ok = false;
    };
    std::vector<std::vector<Cell>> cells(explainers.size(),
                                         std::vector<Cell>(static_cast<size_t>(data.size())));

    parallel_for(data.size(), workers, [&](int64_t img) {
        const Tensor& x = data.images[static_cast<size_t>(img)];
        double c0;
        try {
            c0 = run_backend(model, x, Mask::none(x.size()), cfg, nullptr);
        } catch (const MetricUnavailable&) {
            return;  // baseline failed: the whole image is skipped for all explainers
        }
        for (size_t e = 0; e < explainers.size(); ++e) {
            try {
                Explanation expl = explainers[e].make(model, x, k);
                CEvalResult r = compute_ceval(model, x, expl, cfg);
                cells[e][static_cast<size_t>(img)] = {r.c_value / c0, true};
            } catch (const MetricUnavailable&) {
                // recorded as a skip below
            }
        }
    });

    std::vector<RankRow> rows;
    for (size_t e = 0; e < explainers.size(); ++e) {
        RankRow row;
        row.explainer = explainers[e].id;
        for (const Cell& c : cells[e]) {
            if (!c.ok) {
                row.skipped += 1;
                continue;
            }
            row.values.push_back(c.value);
        }
        row.n = static_cast<int>(row.values.size());
        if (row.n > 0) {
            double sum = 0.0;
            for (double v : row.values) sum += v;
            row.mean_C = sum / row.n;
            row.median_C = quantile(row.values, 0.5);
            row.q1 = quantile(row.values, 0.25);
            row.q3 = quantile(row.values, 0.75);
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace ceval
