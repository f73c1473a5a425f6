#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ceval/tensor.hpp"

namespace ceval {

// Reverse-mode autodiff over a fixed op set: matmul, add, relu, conv2d
// (stride 1, valid/same), maxpool 2x2, flatten, softmax, cross-entropy,
// elementwise multiply, tanh. Graphs are built once and run many times;
// a graph is single-owner mutable during forward/backward.

enum class Op {
    Input,
    Param,
    MatMul,
    Add,
    Relu,
    Tanh,
    Mul,
    Conv2d,
    MaxPool2,
    Flatten,
    Softmax,
    CrossEntropy,
};

enum class Padding { Valid, Same };

using NodeId = int32_t;

struct Node {
    Op op;
    std::string name;
    std::vector<NodeId> inputs;
    Shape shape;                   // inferred at build time
    Padding padding = Padding::Valid;
    Tensor value;                  // cached output of the last forward
    Tensor grad;
    std::vector<int64_t> argsel;   // maxpool winner indices
    bool bound = false;            // Input: value supplied for current forward
};

class Graph {
  public:
    // Named slots. Inputs are bound per forward call; params hold their value
    // until replaced (training mutates them in place via param_value).
    NodeId input(const std::string& name, Shape shape);
    NodeId param(const std::string& name, Tensor initial);

    NodeId matmul(NodeId a, NodeId b, const std::string& name = "");
    // Same-shape add, or rank>=2 plus rank-1 broadcast over the last axis.
    NodeId add(NodeId a, NodeId b, const std::string& name = "");
    NodeId relu(NodeId a, const std::string& name = "");
    NodeId tanh(NodeId a, const std::string& name = "");
    NodeId mul(NodeId a, NodeId b, const std::string& name = "");
    // x: [N,C,H,W], w: [F,C,kh,kw], bias: [F]. Stride 1.
    NodeId conv2d(NodeId x, NodeId w, NodeId bias, Padding pad, const std::string& name = "");
    NodeId maxpool2(NodeId x, const std::string& name = "");
    NodeId flatten(NodeId x, const std::string& name = "");
    // Rowwise over the last axis, max-subtracted.
    NodeId softmax(NodeId x, const std::string& name = "");
    // logits [N,M] vs target distribution [N,M] -> scalar mean, computed in
    // log-sum-exp form.
    NodeId cross_entropy(NodeId logits, NodeId target, const std::string& name = "");

    void set_output(NodeId id);
    NodeId output() const { return output_; }

    Tensor& param_value(const std::string& name);
    const Tensor& value_of(NodeId id) const;
    const Shape& shape_of(NodeId id) const;
    NodeId node_by_name(const std::string& name) const;

    // Evaluates the whole graph; caches intermediates for backward.
    Tensor forward(const std::map<std::string, Tensor>& inputs);
    // Seeds the output gradient and returns d(seed . output)/d(slot) for every
    // named slot (inputs and params). Deterministic.
    std::map<std::string, Tensor> backward(const Tensor& seed);

    std::vector<std::string> input_names() const;
    std::vector<std::string> param_names() const;

    // Distance from the last forward pass to the nearest non-differentiable
    // point: min over relu inputs of |v| and over maxpool cells of the
    // winner/runner-up gap. Finite-difference checks are only meaningful at
    // points where this clears the probe step.
    double min_kink_margin() const;

  private:
    NodeId add_node(Node n);
    void check_id(NodeId id, const std::string& ctx) const;
    void eval(Node& n);
    void backprop(Node& n);
    std::string autoname(const std::string& given, const char* kind);

    std::vector<Node> nodes_;
    std::map<std::string, NodeId> named_;
    NodeId output_ = -1;
    bool forward_done_ = false;
    int auto_counter_ = 0;
};

// Max over checked coordinates of |analytic - central difference| /
// max(1e-12, |analytic|), for the scalarized output sum(seed=1). Checks every
// Input slot coordinate. h must be positive.
double finite_diff_check(Graph& g, const std::map<std::string, Tensor>& at, double h);

// Same check restricted to named slots (inputs or params), optionally probing
// at most max_coords randomly chosen coordinates per slot.
double finite_diff_check(Graph& g, const std::map<std::string, Tensor>& at, double h,
                         const std::vector<std::string>& slots, int64_t max_coords,
                         uint64_t subsample_seed);

}  // namespace ceval
