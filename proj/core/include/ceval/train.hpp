#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "ceval/dataset.hpp"
#include "ceval/model.hpp"

namespace ceval {

enum class OptKind { Sgd, Adam };

// epsilon is the L2 bound on the crafting perturbation, measured on
// [0,1]-scaled inputs. Deltas that exceed it are rescaled onto the ball.
struct AdversarialConfig {
    double epsilon = 0.3;
    bool alternate = true;  // alternate clean/adversarial batches; false = all adversarial
    int craft_iters = 7;
};

struct TrainConfig {
    OptKind optimizer = OptKind::Adam;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps_adam = 1e-8;
    int epochs = 5;
    int batch_size = 32;
    uint64_t seed = 0;
    std::optional<AdversarialConfig> adversarial;
};

struct EpochStats {
    int epoch;
    double loss;
    double accuracy;
};

struct TrainHistory {
    std::vector<EpochStats> epochs;
};

// Deterministic given (model init, cfg.seed). Throws DivergenceError when the
// loss stops being finite, PreconditionError on bad config or data.
TrainHistory train(Classifier& model, const Dataset& data, const TrainConfig& cfg);

// Requires cfg.adversarial. Batches alternate clean/adversarial (or are all
// adversarial); adversarial samples are sign-step (IGA-style) perturbations
// projected onto the epsilon L2 ball and the [0,1] box.
TrainHistory train_adversarial(Classifier& model, const Dataset& data, const TrainConfig& cfg);

double evaluate_accuracy(const Classifier& model, const Dataset& data);

// Accuracy against epsilon-bounded sign-step adversaries crafted per input.
double adversarial_accuracy(const Classifier& model, const Dataset& data, double epsilon,
                            int craft_iters = 7);

// Crafting primitive shared by train_adversarial and adversarial_accuracy.
Tensor craft_bounded_adversarial(ModelRuntime& rt, const Tensor& x, int label, double epsilon,
                                 int iters);

}  // namespace ceval
