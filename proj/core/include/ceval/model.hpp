#pragma once

#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "ceval/graph.hpp"
#include "ceval/tensor.hpp"

namespace ceval {

enum class Arch { Affine, Mlp, ConvNet };

std::string arch_tag(Arch a);
Arch arch_from_tag(const std::string& tag);

// A differentiable multi-class classifier. Weights are plain named tensors;
// once training finishes the object is immutable and safe to share across
// concurrent evaluations (each evaluation builds its own ModelRuntime).
struct Classifier {
    Arch arch = Arch::Affine;
    Shape input_shape;                   // {n} or {C,H,W}
    int num_classes = 0;
    std::vector<int64_t> hidden;         // MLP hidden layer sizes
    std::map<std::string, Tensor> weights;

    int64_t input_size() const { return shape_numel(input_shape); }

    // Fully-connected weights are stored input-major ([in, out]) so they feed
    // matmul directly.
    static Classifier affine(int64_t n, int num_classes);
    static Classifier mlp(Shape input_shape, std::vector<int64_t> hidden, int num_classes);
    // conv 8@5x5 -> relu -> maxpool -> conv 16@5x5 -> relu -> maxpool ->
    // fc 128 -> fc num_classes (valid padding).
    static Classifier lenet_lite(Shape input_shape, int num_classes);

    void init_weights(uint64_t seed);
};

// Owns the graphs needed to evaluate one classifier. One runtime per
// invocation/thread; the underlying classifier weights are only read.
class ModelRuntime {
  public:
    explicit ModelRuntime(const Classifier& model);

    // x may be a single input ({n} or {C,H,W}) or a batch with a leading
    // batch axis. Returns logits with the same batching.
    Tensor logits(const Tensor& x);
    std::pair<Tensor, int> predict(const Tensor& x);  // single input only
    int label(const Tensor& x);

    // J_label = cross-entropy(softmax(logits), label) and d J / d x.
    std::pair<double, Tensor> loss_and_input_grad(const Tensor& x, int label);
    double loss(const Tensor& x, int label);
    // d(seed . logits)/dx for a single input; seed has length num_classes.
    Tensor logits_input_grad(const Tensor& x, const Tensor& seed);

    // Batched loss pass for training: returns (mean loss, logits) and fills
    // weight gradients. xb: [B, ...], labels size B.
    std::pair<double, Tensor> train_step_grads(const Tensor& xb, const std::vector<int>& labels,
                                               std::map<std::string, Tensor>& grads_out);

    Graph& loss_graph(int64_t batch);  // exposed for finite-difference checks
    Graph& logits_graph(int64_t batch);
    void sync_params();  // re-copy weights from the classifier into the graphs

    const Classifier& model() const { return *model_; }

  private:
    Tensor to_batch(const Tensor& x, bool& was_single) const;
    std::unique_ptr<Graph> build(int64_t batch, bool with_loss, NodeId* logits_out) const;

    const Classifier* model_;
    std::map<int64_t, std::unique_ptr<Graph>> logits_graphs_;
    std::map<int64_t, std::unique_ptr<Graph>> loss_graphs_;
    std::map<int64_t, NodeId> loss_logits_node_;
};

// Convenience wrappers matching the one-shot call pattern.
std::pair<Tensor, int> predict(const Classifier& model, const Tensor& x);
std::pair<double, Tensor> loss_component(const Classifier& model, const Tensor& x, int label);

// JSON weight format, format_version 1. Round-trips are bitwise on weights.
void save_model(const Classifier& model, const std::string& path);
Classifier load_model(const std::string& path);

Tensor onehot(int label, int num_classes);

}  // namespace ceval
