#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ceval/explain.hpp"
#include "ceval/model.hpp"

namespace ceval {

// Frozen (explanatory) features may not change at all; attacks perturb only
// the free complement.
struct Mask {
    std::vector<uint8_t> frozen;
    int64_t free_count = 0;

    static Mask none(int64_t n);
    static Mask all_frozen(int64_t n);
    static Mask from_explanation(const Explanation& e, int64_t n);
    static Mask from_indices(const std::vector<int64_t>& frozen_indices, int64_t n);

    bool is_frozen(int64_t i) const { return frozen[static_cast<size_t>(i)] != 0; }
};

struct EpsSchedule {
    double eps0 = 0.01;
    double factor = 1.3;
    int max_steps = 40;
};

struct CwParams {
    double c_init = 1e-2;
    int binary_search_steps = 9;
    int max_iters = 1000;
    double adam_lr = 5e-3;
    double kappa = 0.0;
    bool abort_early = true;
    // Run one binary search per candidate class and keep the smallest-norm
    // success. The untargeted objective follows the logit-closest class,
    // which is not always the L2-closest decision boundary; the sweep costs
    // (num_classes - 1)x but recovers the true minimum. Off by default.
    bool targeted_sweep = false;
};

enum class AttackBackend { Gsa, Iga, Cw };

std::string backend_tag(AttackBackend b);

struct AttackConfig {
    AttackBackend backend = AttackBackend::Cw;
    EpsSchedule eps_schedule;
    // IGA step size as a fraction of the scheduled epsilon; alpha = 1 with a
    // single iteration reproduces GSA exactly.
    double iga_alpha = 0.25;
    int iga_iters = 10;
    CwParams cw;
    int norm_p = 2;  // L2 only

    void validate() const;
};

struct PerturbationResult {
    Tensor perturbed;  // in [0,1]^n
    Tensor delta;      // exactly 0 on frozen coordinates
    double l2_norm = 0.0;
    int new_label = -1;
    int original_label = -1;
    AttackBackend backend = AttackBackend::Gsa;
    int iterations_used = 0;
};

// Single signed gradient step, epsilon searched upward through the schedule;
// returns the first scheduled epsilon that flips the label.
PerturbationResult attack_gsa(const Classifier& model, const Tensor& x, const Mask& mask,
                              const AttackConfig& cfg);

// Iterated signed steps clipped to the per-coordinate [x-eps, x+eps]
// neighborhood and the [0,1] box, frozen coordinates pinned to x.
PerturbationResult attack_iga(const Classifier& model, const Tensor& x, const Mask& mask,
                              const AttackConfig& cfg);

// Adam-optimized minimum-distortion attack. Free coordinates are optimized in
// tanh space so the box constraint is unconditional; frozen coordinates are
// copied from x and never parameterized. Outer binary search over the loss
// constant keeps the smallest-norm success.
PerturbationResult attack_cw(const Classifier& model, const Tensor& x, const Mask& mask,
                             const AttackConfig& cfg);

PerturbationResult run_attack(const Classifier& model, const Tensor& x, const Mask& mask,
                              const AttackConfig& cfg);

struct VerifyReport {
    bool ok = true;
    std::vector<std::string> violations;
};

// Independently re-checks the result invariants: frozen coordinates bitwise
// equal, box membership, label actually flipped, norm consistent.
VerifyReport verify_result(const Classifier& model, const Tensor& x, const Mask& mask,
                           const PerturbationResult& result);

}  // namespace ceval
