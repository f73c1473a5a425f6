#include "ceval/train.hpp"

#include <algorithm>
#include <cmath>

#include "ceval/rng.hpp"

namespace ceval {

namespace {

struct AdamState {
    std::map<std::string, Tensor> m, v;
    int64_t t = 0;
};

void apply_update(Classifier& model, const std::map<std::string, Tensor>& grads,
                  const TrainConfig& cfg, AdamState& adam) {
    if (cfg.optimizer == OptKind::Sgd) {
        for (auto& [name, w] : model.weights) {
            const Tensor& g = grads.at(name);
            for (int64_t i = 0; i < w.size(); ++i) w[i] -= cfg.lr * g[i];
        }
        return;
    }
    adam.t += 1;
    double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(adam.t));
    double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(adam.t));
    for (auto& [name, w] : model.weights) {
        const Tensor& g = grads.at(name);
        Tensor& m = adam.m[name];
        Tensor& v = adam.v[name];
        if (m.size() != w.size()) m = Tensor(w.shape);
        if (v.size() != w.size()) v = Tensor(w.shape);
        for (int64_t i = 0; i < w.size(); ++i) {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            double mh = m[i] / bc1;
            double vh = v[i] / bc2;
            w[i] -= cfg.lr * mh / (std::sqrt(vh) + cfg.eps_adam);
        }
    }
}

void validate(const Classifier& model, const Dataset& data, const TrainConfig& cfg) {
    if (cfg.epochs < 1) throw PreconditionError("train: epochs must be >= 1");
    if (!(cfg.lr > 0.0)) throw PreconditionError("train: lr must be > 0");
    if (cfg.batch_size < 1) throw PreconditionError("train: batch_size must be >= 1");
    if (data.size() == 0) throw PreconditionError("train: dataset is empty");
    for (int l : data.labels)
        if (l < 0 || l >= model.num_classes)
            throw PreconditionError("train: label " + std::to_string(l) + " outside [0, " +
                                    std::to_string(model.num_classes) + ")");
}

Tensor gather_batch(const Dataset& data, const std::vector<int64_t>& order, int64_t begin,
                    int64_t end) {
    int64_t B = end - begin;
    int64_t n = data.images.front().size();
    const Shape& in = data.images.front().shape;
    Shape bs;
    bs.push_back(B);
    if (in.size() == 3) {
        bs.insert(bs.end(), in.begin(), in.end());
    } else {
        bs.push_back(n);
    }
    Tensor xb(bs);
    for (int64_t i = 0; i < B; ++i) {
        const Tensor& img = data.images[static_cast<size_t>(order[static_cast<size_t>(begin + i)])];
        std::copy(img.data.begin(), img.data.end(), xb.data.begin() + i * n);
    }
    return xb;
}

TrainHistory run_training(Classifier& model, const Dataset& data, const TrainConfig& cfg,
                          bool adversarial) {
    validate(model, data, cfg);
    AdversarialConfig adv;
    if (adversarial) {
        if (!cfg.adversarial) throw PreconditionError("train_adversarial: missing adversarial config");
        adv = *cfg.adversarial;
        if (!(adv.epsilon > 0.0))
            throw PreconditionError("train_adversarial: epsilon must be > 0");
        if (adv.craft_iters < 1)
            throw PreconditionError("train_adversarial: craft_iters must be >= 1");
    }

    ModelRuntime rt(model);
    AdamState adam;
    Rng rng(cfg.seed);
    std::vector<int64_t> order(static_cast<size_t>(data.size()));
    for (int64_t i = 0; i < data.size(); ++i) order[static_cast<size_t>(i)] = i;

    TrainHistory history;
    int64_t batch_counter = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        double loss_sum = 0.0;
        int64_t correct = 0;
        int64_t batches = 0;
        for (int64_t begin = 0; begin < data.size(); begin += cfg.batch_size) {
            int64_t end = std::min<int64_t>(begin + cfg.batch_size, data.size());
            Tensor xb = gather_batch(data, order, begin, end);
            std::vector<int> yb;
            for (int64_t i = begin; i < end; ++i)
                yb.push_back(data.labels[static_cast<size_t>(order[static_cast<size_t>(i)])]);

            bool perturb = adversarial && (!adv.alternate || batch_counter % 2 == 1);
            if (perturb) {
                int64_t n = data.images.front().size();
                for (int64_t i = 0; i < end - begin; ++i) {
                    Tensor x(data.images.front().shape);
                    std::copy(xb.data.begin() + i * n, xb.data.begin() + (i + 1) * n,
                              x.data.begin());
                    Tensor xa = craft_bounded_adversarial(rt, x, yb[static_cast<size_t>(i)],
                                                          adv.epsilon, adv.craft_iters);
                    std::copy(xa.data.begin(), xa.data.end(), xb.data.begin() + i * n);
                }
            }

            std::map<std::string, Tensor> grads;
            auto [loss, logits] = rt.train_step_grads(xb, yb, grads);
            if (!std::isfinite(loss))
                throw DivergenceError("training loss became non-finite at epoch " +
                                      std::to_string(epoch + 1));
            apply_update(model, grads, cfg, adam);
            rt.sync_params();

            loss_sum += loss;
            batches += 1;
            batch_counter += 1;
            int64_t B = end - begin;
            for (int64_t i = 0; i < B; ++i) {
                int64_t off = i * model.num_classes;
                int64_t best = 0;
                for (int j = 1; j < model.num_classes; ++j)
                    if (logits[off + j] > logits[off + best]) best = j;
                if (static_cast<int>(best) == yb[static_cast<size_t>(i)]) correct += 1;
            }
        }
        history.epochs.push_back({epoch + 1, loss_sum / static_cast<double>(batches),
                                  static_cast<double>(correct) / static_cast<double>(data.size())});
    }
    return history;
}

}  // namespace

Tensor craft_bounded_adversarial(ModelRuntime& rt, const Tensor& x, int label, double epsilon,
                                 int iters) {
    int64_t n = x.size();
    double alpha = 2.0 * epsilon / (static_cast<double>(iters) * std::sqrt(static_cast<double>(n)));
    Tensor cur = x;
    for (int it = 0; it < iters; ++it) {
        auto [loss, grad] = rt.loss_and_input_grad(cur, label);
        (void)loss;
        for (int64_t i = 0; i < n; ++i) {
            double s = grad[i] > 0.0 ? 1.0 : (grad[i] < 0.0 ? -1.0 : 0.0);
            cur[i] += alpha * s;  // ascend the loss
        }
        // project back: L2 ball around x, then the box. x is inside the box,
        // so the clamp only shrinks the delta further.
        double norm = l2_dist(cur, x);
        if (norm > epsilon) {
            double f = epsilon / norm;
            for (int64_t i = 0; i < n; ++i) cur[i] = x[i] + f * (cur[i] - x[i]);
        }
        for (auto& v : cur.data) v = std::min(1.0, std::max(0.0, v));
    }
    return cur;
}

TrainHistory train(Classifier& model, const Dataset& data, const TrainConfig& cfg) {
    return run_training(model, data, cfg, false);
}

TrainHistory train_adversarial(Classifier& model, const Dataset& data, const TrainConfig& cfg) {
    return run_training(model, data, cfg, true);
}

double evaluate_accuracy(const Classifier& model, const Dataset& data) {
    if (data.size() == 0) throw PreconditionError("evaluate_accuracy: empty dataset");
    ModelRuntime rt(model);
    int64_t correct = 0;
    for (int64_t i = 0; i < data.size(); ++i)
        if (rt.label(data.images[static_cast<size_t>(i)]) == data.labels[static_cast<size_t>(i)])
            correct += 1;
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

double adversarial_accuracy(const Classifier& model, const Dataset& data, double epsilon,
                            int craft_iters) {
    if (!(epsilon > 0.0)) throw PreconditionError("adversarial_accuracy: epsilon must be > 0");
    if (data.size() == 0) throw PreconditionError("adversarial_accuracy: empty dataset");
    ModelRuntime rt(model);
    int64_t correct = 0;
    for (int64_t i = 0; i < data.size(); ++i) {
        Tensor xa = craft_bounded_adversarial(rt, data.images[static_cast<size_t>(i)],
                                              data.labels[static_cast<size_t>(i)], epsilon,
                                              craft_iters);
        if (rt.label(xa) == data.labels[static_cast<size_t>(i)]) correct += 1;
    }
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

}  // namespace ceval
