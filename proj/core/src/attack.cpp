#include "ceval/attack.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace ceval {

Mask Mask::none(int64_t n) {
    Mask m;
    m.frozen.assign(static_cast<size_t>(n), 0);
    m.free_count = n;
    return m;
}

Mask Mask::all_frozen(int64_t n) {
    Mask m;
    m.frozen.assign(static_cast<size_t>(n), 1);
    m.free_count = 0;
    return m;
}

Mask Mask::from_indices(const std::vector<int64_t>& frozen_indices, int64_t n) {
    Mask m = none(n);
    for (int64_t i : frozen_indices) {
        if (i < 0 || i >= n)
            throw PreconditionError("mask index " + std::to_string(i) + " outside [0, " +
                                    std::to_string(n) + ")");
        if (!m.frozen[static_cast<size_t>(i)]) {
            m.frozen[static_cast<size_t>(i)] = 1;
            m.free_count -= 1;
        }
    }
    return m;
}

Mask Mask::from_explanation(const Explanation& e, int64_t n) {
    return from_indices(e.feature_indices, n);
}

std::string backend_tag(AttackBackend b) {
    switch (b) {
        case AttackBackend::Gsa: return "gsa";
        case AttackBackend::Iga: return "iga";
        case AttackBackend::Cw: return "cw";
    }
    return "?";
}

void AttackConfig::validate() const {
    if (norm_p != 2) throw PreconditionError("attack config: only the L2 norm is supported");
    if (!(eps_schedule.eps0 > 0.0) || !(eps_schedule.factor > 1.0) || eps_schedule.max_steps < 1)
        throw PreconditionError("attack config: bad epsilon schedule");
    if (!(iga_alpha > 0.0) || iga_iters < 1)
        throw PreconditionError("attack config: bad IGA parameters");
    if (!(cw.c_init > 0.0) || cw.binary_search_steps < 1 || cw.max_iters < 1 ||
        !(cw.adam_lr > 0.0) || cw.kappa < 0.0)
        throw PreconditionError("attack config: bad CW parameters");
}

namespace {

void check_input(const Tensor& x, const Mask& mask) {
    if (static_cast<int64_t>(mask.frozen.size()) != x.size())
        throw ShapeError("mask covers " + std::to_string(mask.frozen.size()) +
                         " features, input has " + std::to_string(x.size()));
    if (mask.free_count < 1) throw AllFrozen("every feature is frozen; nothing to perturb");
}

PerturbationResult make_result(const Tensor& x, Tensor perturbed, int original_label,
                               int new_label, AttackBackend backend, int iterations) {
    PerturbationResult r;
    r.delta = Tensor(x.shape);
    for (int64_t i = 0; i < x.size(); ++i) r.delta[i] = perturbed[i] - x[i];
    r.perturbed = std::move(perturbed);
    r.l2_norm = l2_norm(r.delta);
    r.new_label = new_label;
    r.original_label = original_label;
    r.backend = backend;
    r.iterations_used = iterations;
    return r;
}

// Gradient of the label-l log-likelihood component J_l (the quantity the
// sign attacks descend). J_l = -cross_entropy(x, l), so flipping the sign of
// the loss gradient both matches the descent form of the update rule and
// actually erodes the prediction.
Tensor attack_gradient(ModelRuntime& rt, const Tensor& x, int label) {
    Tensor g = rt.loss_and_input_grad(x, label).second;
    for (auto& v : g.data) v = -v;
    return g;
}

}  // namespace

PerturbationResult attack_gsa(const Classifier& model, const Tensor& x, const Mask& mask,
                              const AttackConfig& cfg) {
    cfg.validate();
    check_input(x, mask);
    ModelRuntime rt(model);
    int l0 = rt.label(x);
    Tensor g = attack_gradient(rt, x, l0);
    double eps = cfg.eps_schedule.eps0;
    for (int step = 0; step < cfg.eps_schedule.max_steps; ++step, eps *= cfg.eps_schedule.factor) {
        Tensor cand = x;
        for (int64_t i = 0; i < x.size(); ++i) {
            if (mask.is_frozen(i)) continue;
            double s = g[i] > 0.0 ? 1.0 : (g[i] < 0.0 ? -1.0 : 0.0);
            cand[i] = std::min(1.0, std::max(0.0, x[i] - eps * s));
        }
        int label = rt.label(cand);
        if (label != l0) return make_result(x, std::move(cand), l0, label, AttackBackend::Gsa, step + 1);
    }
    throw AttackFailed("gsa: no scheduled epsilon flipped the label");
}

PerturbationResult attack_iga(const Classifier& model, const Tensor& x, const Mask& mask,
                              const AttackConfig& cfg) {
    cfg.validate();
    check_input(x, mask);
    ModelRuntime rt(model);
    int l0 = rt.label(x);
    double eps = cfg.eps_schedule.eps0;
    int iterations = 0;
    for (int step = 0; step < cfg.eps_schedule.max_steps; ++step, eps *= cfg.eps_schedule.factor) {
        double alpha = cfg.iga_alpha * eps;
        Tensor cur = x;
        for (int it = 0; it < cfg.iga_iters; ++it) {
            Tensor g = attack_gradient(rt, cur, l0);
            iterations += 1;
            for (int64_t i = 0; i < x.size(); ++i) {
                if (mask.is_frozen(i)) continue;
                double s = g[i] > 0.0 ? 1.0 : (g[i] < 0.0 ? -1.0 : 0.0);
                double v = cur[i] - alpha * s;
                v = std::min(x[i] + eps, std::max(x[i] - eps, v));  // clip_{x,eps}
                cur[i] = std::min(1.0, std::max(0.0, v));
            }
            int label = rt.label(cur);
            if (label != l0)
                return make_result(x, std::move(cur), l0, label, AttackBackend::Iga, iterations);
        }
    }
    throw AttackFailed("iga: no scheduled epsilon flipped the label");
}

namespace {

struct CwWorkspace {
    std::vector<int64_t> free_idx;  // scatter map s: variable slot -> feature index
    std::vector<double> w, m, v;    // tanh-space variables and Adam state
};

double tanh_clip(double w) { return std::min(8.0, std::max(-8.0, w)); }

}  // namespace

PerturbationResult attack_cw(const Classifier& model, const Tensor& x, const Mask& mask,
                             const AttackConfig& cfg) {
    cfg.validate();
    check_input(x, mask);
    ModelRuntime rt(model);
    int l0 = rt.label(x);
    const int m_classes = model.num_classes;

    CwWorkspace ws;
    for (int64_t i = 0; i < x.size(); ++i)
        if (!mask.is_frozen(i)) ws.free_idx.push_back(i);
    size_t nf = ws.free_idx.size();

    std::vector<double> w_init(nf);
    for (size_t j = 0; j < nf; ++j) {
        double v = std::min(1.0 - 1e-12, std::max(1e-12, x[ws.free_idx[j]]));
        w_init[j] = tanh_clip(std::atanh(2.0 * v - 1.0));
    }

    Tensor perturbed = x;  // frozen coordinates stay bitwise equal to x forever
    auto assemble = [&](const std::vector<double>& w) {
        for (size_t j = 0; j < nf; ++j)
            perturbed[ws.free_idx[j]] = (std::tanh(w[j]) + 1.0) / 2.0;
    };

    double best_norm = std::numeric_limits<double>::infinity();
    Tensor best;
    int best_label = -1;
    double best_c = 0.0;
    int iterations = 0;
    Tensor seed({static_cast<int64_t>(m_classes)});

    // One Adam descent at constant c. target < 0: untargeted, the loss
    // margin follows the currently-best other class; target >= 0: margin
    // against that class only. Returns whether any iterate flipped.
    auto descend = [&](int target, double c, const std::vector<double>& w_start, double lr) {
        ws.w = w_start;
        ws.m.assign(nf, 0.0);
        ws.v.assign(nf, 0.0);
        bool any_success = false;
        double prev_check = std::numeric_limits<double>::infinity();
        const double b1 = 0.9, b2 = 0.999, adam_eps = 1e-8;

        for (int it = 1; it <= cfg.cw.max_iters; ++it) {
            iterations += 1;
            assemble(ws.w);
            Tensor z = rt.logits(perturbed);
            int rival = target;
            if (rival < 0) {
                for (int j = 0; j < m_classes; ++j)
                    if (j != l0 && (rival < 0 || z[j] > z[rival])) rival = j;
            }
            double margin = z[l0] - z[rival];
            int label = static_cast<int>(argmax_index(z));
            double dist2 = 0.0;
            for (size_t j = 0; j < nf; ++j) {
                double d = perturbed[ws.free_idx[j]] - x[ws.free_idx[j]];
                dist2 += d * d;
            }
            if (label != l0) {
                any_success = true;
                double norm = std::sqrt(dist2);
                if (norm < best_norm) {
                    best_norm = norm;
                    best = perturbed;
                    best_label = label;
                    best_c = c;
                }
            }
            double obj = dist2 + c * std::max(margin, -cfg.cw.kappa);
            if (cfg.cw.abort_early && it % 50 == 0) {
                if (obj > prev_check * 0.9999) break;
                prev_check = obj;
            }

            // d obj / d perturbed: distance term on free coords plus the
            // loss term while it is still active
            Tensor gx;
            if (margin > -cfg.cw.kappa) {
                for (int j = 0; j < m_classes; ++j) seed[j] = 0.0;
                seed[l0] = c;
                seed[rival] = -c;
                gx = rt.logits_input_grad(perturbed, seed);
            } else {
                gx = Tensor(x.shape);
            }
            double bc1 = 1.0 - std::pow(b1, it);
            double bc2 = 1.0 - std::pow(b2, it);
            for (size_t j = 0; j < nf; ++j) {
                int64_t i = ws.free_idx[j];
                double gp = gx[i] + 2.0 * (perturbed[i] - x[i]);
                double t = std::tanh(ws.w[j]);
                double gw = gp * (1.0 - t * t) / 2.0;
                ws.m[j] = b1 * ws.m[j] + (1.0 - b1) * gw;
                ws.v[j] = b2 * ws.v[j] + (1.0 - b2) * gw * gw;
                ws.w[j] = tanh_clip(ws.w[j] - lr * (ws.m[j] / bc1) /
                                                 (std::sqrt(ws.v[j] / bc2) + adam_eps));
            }
        }
        return any_success;
    };

    auto binary_search = [&](int target) {
        double c = cfg.cw.c_init;
        double c_lo = 0.0;
        double c_hi = std::numeric_limits<double>::infinity();
        for (int round = 0; round < cfg.cw.binary_search_steps; ++round) {
            bool round_success = descend(target, c, w_init, cfg.cw.adam_lr);
            if (round_success) {
                c_hi = c;
                c = (c_lo + c_hi) / 2.0;
            } else {
                c_lo = c;
                c = std::isinf(c_hi) ? c * 10.0 : (c_lo + c_hi) / 2.0;
            }
        }
    };

    if (cfg.cw.targeted_sweep) {
        for (int target = 0; target < m_classes; ++target)
            if (target != l0) binary_search(target);
    } else {
        binary_search(-1);
    }

    // Adam cannot settle below its step size; when a success exists, polish
    // from it at progressively smaller rates so tiny optima resolve too.
    for (double shrink : {20.0, 400.0}) {
        if (best_label < 0) break;
        std::vector<double> w_best(nf);
        for (size_t j = 0; j < nf; ++j) {
            double v = std::min(1.0 - 1e-12, std::max(1e-12, best[ws.free_idx[j]]));
            w_best[j] = tanh_clip(std::atanh(2.0 * v - 1.0));
        }
        descend(-1, best_c, w_best, cfg.cw.adam_lr / shrink);
    }

    if (best_label < 0) throw AttackFailed("cw: no binary-search round produced a label flip");
    return make_result(x, std::move(best), l0, best_label, AttackBackend::Cw, iterations);
}

PerturbationResult run_attack(const Classifier& model, const Tensor& x, const Mask& mask,
                              const AttackConfig& cfg) {
    switch (cfg.backend) {
        case AttackBackend::Gsa: return attack_gsa(model, x, mask, cfg);
        case AttackBackend::Iga: return attack_iga(model, x, mask, cfg);
        case AttackBackend::Cw: return attack_cw(model, x, mask, cfg);
    }
    throw PreconditionError("unknown attack backend");
}

VerifyReport verify_result(const Classifier& model, const Tensor& x, const Mask& mask,
                           const PerturbationResult& result) {
    VerifyReport rep;
    auto fail = [&](const std::string& msg) {
        rep.ok = false;
        rep.violations.push_back(msg);
    };
    if (!result.perturbed.same_shape(x) || !result.delta.same_shape(x)) {
        fail("shape mismatch between result and input");
        return rep;
    }
    for (int64_t i = 0; i < x.size(); ++i) {
        if (mask.is_frozen(i)) {
            if (result.delta[i] != 0.0 || result.perturbed[i] != x[i]) {
                fail("frozen feature modified at index " + std::to_string(i));
                break;
            }
        }
    }
    for (int64_t i = 0; i < x.size(); ++i) {
        if (result.perturbed[i] < 0.0 || result.perturbed[i] > 1.0) {
            fail("perturbed value outside [0,1] at index " + std::to_string(i));
            break;
        }
        if (result.perturbed[i] != x[i] + result.delta[i] &&
            std::abs(result.perturbed[i] - (x[i] + result.delta[i])) > 1e-12) {
            fail("delta inconsistent with perturbed at index " + std::to_string(i));
            break;
        }
    }
    ModelRuntime rt(model);
    int l0 = rt.label(x);
    int lp = rt.label(result.perturbed);
    if (lp == l0) fail("label did not change");
    if (lp != result.new_label) fail("stored new_label does not match recomputed label");
    if (l0 != result.original_label) fail("stored original_label does not match model prediction");
    double norm = l2_dist(result.perturbed, x);
    if (std::abs(norm - result.l2_norm) > 1e-9 * std::max(1.0, norm))
        fail("stored l2_norm inconsistent with perturbed - x");
    return rep;
}

}  // namespace ceval
