#include "ceval/model.hpp"

#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "ceval/rng.hpp"

using nlohmann::json;

namespace ceval {

std::string arch_tag(Arch a) {
    switch (a) {
        case Arch::Affine: return "affine";
        case Arch::Mlp: return "mlp";
        case Arch::ConvNet: return "convnet";
    }
    return "?";
}

Arch arch_from_tag(const std::string& tag) {
    if (tag == "affine") return Arch::Affine;
    if (tag == "mlp") return Arch::Mlp;
    if (tag == "convnet") return Arch::ConvNet;
    throw IoError("unknown architecture tag '" + tag + "'");
}

Classifier Classifier::affine(int64_t n, int num_classes) {
    if (n < 1 || num_classes < 2) throw PreconditionError("affine: need n >= 1, classes >= 2");
    Classifier c;
    c.arch = Arch::Affine;
    c.input_shape = {n};
    c.num_classes = num_classes;
    c.weights["W"] = Tensor({n, num_classes});
    c.weights["b"] = Tensor({num_classes});
    return c;
}

Classifier Classifier::mlp(Shape input_shape, std::vector<int64_t> hidden, int num_classes) {
    if (num_classes < 2) throw PreconditionError("mlp: classes >= 2");
    Classifier c;
    c.arch = Arch::Mlp;
    c.input_shape = std::move(input_shape);
    c.num_classes = num_classes;
    c.hidden = std::move(hidden);
    int64_t prev = c.input_size();
    for (size_t i = 0; i < c.hidden.size(); ++i) {
        c.weights["W" + std::to_string(i + 1)] = Tensor({prev, c.hidden[i]});
        c.weights["b" + std::to_string(i + 1)] = Tensor({c.hidden[i]});
        prev = c.hidden[i];
    }
    std::string wn = "W" + std::to_string(c.hidden.size() + 1);
    std::string bn = "b" + std::to_string(c.hidden.size() + 1);
    c.weights[wn] = Tensor({prev, num_classes});
    c.weights[bn] = Tensor({num_classes});
    return c;
}

Classifier Classifier::lenet_lite(Shape input_shape, int num_classes) {
    if (input_shape.size() != 3) throw PreconditionError("lenet_lite: input shape must be {C,H,W}");
    Classifier c;
    c.arch = Arch::ConvNet;
    c.input_shape = input_shape;
    c.num_classes = num_classes;
    int64_t C = input_shape[0], H = input_shape[1], W = input_shape[2];
    c.weights["conv1_w"] = Tensor({8, C, 5, 5});
    c.weights["conv1_b"] = Tensor({8});
    c.weights["conv2_w"] = Tensor({16, 8, 5, 5});
    c.weights["conv2_b"] = Tensor({16});
    int64_t h1 = (H - 4) / 2, w1 = (W - 4) / 2;
    int64_t h2 = (h1 - 4) / 2, w2 = (w1 - 4) / 2;
    if (h2 < 1 || w2 < 1) throw PreconditionError("lenet_lite: input too small");
    int64_t flat = 16 * h2 * w2;
    c.weights["fc1_w"] = Tensor({flat, 128});
    c.weights["fc1_b"] = Tensor({128});
    c.weights["fc2_w"] = Tensor({128, static_cast<int64_t>(num_classes)});
    c.weights["fc2_b"] = Tensor({static_cast<int64_t>(num_classes)});
    return c;
}

void Classifier::init_weights(uint64_t seed) {
    Rng rng(seed);
    for (auto& [name, w] : weights) {
        if (name[0] == 'b' || name.find("_b") != std::string::npos) {
            for (auto& v : w.data) v = 0.0;
            continue;
        }
        int64_t fan_in = 1;
        if (w.rank() == 2) fan_in = w.shape[0];
        else if (w.rank() == 4) fan_in = w.shape[1] * w.shape[2] * w.shape[3];
        double scale = std::sqrt(2.0 / static_cast<double>(fan_in));
        for (auto& v : w.data) v = scale * rng.normal();
    }
}

Tensor onehot(int label, int num_classes) {
    if (label < 0 || label >= num_classes)
        throw PreconditionError("label " + std::to_string(label) + " outside [0, " +
                                std::to_string(num_classes) + ")");
    Tensor t({static_cast<int64_t>(num_classes)});
    t[label] = 1.0;
    return t;
}

ModelRuntime::ModelRuntime(const Classifier& model) : model_(&model) {}

std::unique_ptr<Graph> ModelRuntime::build(int64_t batch, bool with_loss,
                                           NodeId* logits_out) const {
    auto g = std::make_unique<Graph>();
    const Classifier& m = *model_;
    NodeId logits = -1;
    if (m.arch == Arch::Affine || m.arch == Arch::Mlp) {
        NodeId x = g->input("x", {batch, m.input_size()});
        NodeId cur = x;
        size_t layers = m.arch == Arch::Affine ? 1 : m.hidden.size() + 1;
        for (size_t i = 0; i < layers; ++i) {
            std::string wn = m.arch == Arch::Affine ? "W" : "W" + std::to_string(i + 1);
            std::string bn = m.arch == Arch::Affine ? "b" : "b" + std::to_string(i + 1);
            NodeId w = g->param(wn, m.weights.at(wn));
            NodeId b = g->param(bn, m.weights.at(bn));
            cur = g->add(g->matmul(cur, w, "fc" + std::to_string(i + 1)), b);
            if (i + 1 < layers) cur = g->relu(cur);
        }
        logits = cur;
    } else {
        NodeId x = g->input("x", {batch, m.input_shape[0], m.input_shape[1], m.input_shape[2]});
        NodeId c1 = g->conv2d(x, g->param("conv1_w", m.weights.at("conv1_w")),
                              g->param("conv1_b", m.weights.at("conv1_b")), Padding::Valid, "conv1");
        NodeId p1 = g->maxpool2(g->relu(c1));
        NodeId c2 = g->conv2d(p1, g->param("conv2_w", m.weights.at("conv2_w")),
                              g->param("conv2_b", m.weights.at("conv2_b")), Padding::Valid, "conv2");
        NodeId p2 = g->maxpool2(g->relu(c2));
        NodeId flat = g->flatten(p2);
        NodeId h = g->relu(g->add(g->matmul(flat, g->param("fc1_w", m.weights.at("fc1_w")), "fc1"),
                                  g->param("fc1_b", m.weights.at("fc1_b"))));
        logits = g->add(g->matmul(h, g->param("fc2_w", m.weights.at("fc2_w")), "fc2"),
                        g->param("fc2_b", m.weights.at("fc2_b")));
    }
    if (logits_out) *logits_out = logits;
    if (with_loss) {
        NodeId target = g->input("target", {batch, static_cast<int64_t>(m.num_classes)});
        NodeId loss = g->cross_entropy(logits, target, "loss");
        g->set_output(loss);
    } else {
        g->set_output(logits);
    }
    return g;
}

Graph& ModelRuntime::logits_graph(int64_t batch) {
    auto it = logits_graphs_.find(batch);
    if (it == logits_graphs_.end())
        it = logits_graphs_.emplace(batch, build(batch, false, nullptr)).first;
    return *it->second;
}

Graph& ModelRuntime::loss_graph(int64_t batch) {
    auto it = loss_graphs_.find(batch);
    if (it == loss_graphs_.end()) {
        NodeId logits_node = -1;
        it = loss_graphs_.emplace(batch, build(batch, true, &logits_node)).first;
        loss_logits_node_[batch] = logits_node;
    }
    return *it->second;
}

void ModelRuntime::sync_params() {
    for (auto* graphs : {&logits_graphs_, &loss_graphs_})
        for (auto& [batch, g] : *graphs)
            for (const auto& [name, w] : model_->weights) g->param_value(name) = w;
}

Tensor ModelRuntime::to_batch(const Tensor& x, bool& was_single) const {
    const Shape& in = model_->input_shape;
    int64_t n = shape_numel(in);
    // conv graphs take [B,C,H,W]; affine/mlp graphs take [B, n]
    auto graph_shape = [&](int64_t B) {
        if (model_->arch == Arch::ConvNet) return Shape{B, in[0], in[1], in[2]};
        return Shape{B, n};
    };
    if (x.shape == in || x.size() == n) {
        was_single = true;
        return reshaped(x, graph_shape(1));
    }
    if (x.rank() >= 2) {
        int64_t rest = 1;
        for (int64_t i = 1; i < x.rank(); ++i) rest *= x.shape[i];
        if (rest == n) {
            was_single = false;
            return reshaped(x, graph_shape(x.shape[0]));
        }
    }
    throw ShapeError("input shape " + shape_str(x.shape) + " does not match model input " +
                     shape_str(in));
}

Tensor ModelRuntime::logits(const Tensor& x) {
    bool single = false;
    Tensor xb = to_batch(x, single);
    Tensor out = logits_graph(xb.shape[0]).forward({{"x", xb}});
    if (single) return reshaped(out, {out.shape[1]});
    return out;
}

std::pair<Tensor, int> ModelRuntime::predict(const Tensor& x) {
    Tensor z = logits(x);
    if (z.rank() != 1) throw PreconditionError("predict expects a single input");
    return {z, static_cast<int>(argmax_index(z))};
}

int ModelRuntime::label(const Tensor& x) { return predict(x).second; }

std::pair<double, Tensor> ModelRuntime::loss_and_input_grad(const Tensor& x, int label) {
    if (label < 0 || label >= model_->num_classes)
        throw PreconditionError("label " + std::to_string(label) + " outside [0, " +
                                std::to_string(model_->num_classes) + ")");
    bool single = false;
    Tensor xb = to_batch(x, single);
    if (!single) throw PreconditionError("loss_and_input_grad expects a single input");
    Graph& g = loss_graph(1);
    Tensor y = reshaped(onehot(label, model_->num_classes), {1, model_->num_classes});
    Tensor loss = g.forward({{"x", xb}, {"target", y}});
    Tensor seed({1});
    seed[0] = 1.0;
    auto grads = g.backward(seed);
    Tensor gx = reshaped(grads.at("x"), x.shape);
    return {loss[0], gx};
}

double ModelRuntime::loss(const Tensor& x, int label) { return loss_and_input_grad(x, label).first; }

Tensor ModelRuntime::logits_input_grad(const Tensor& x, const Tensor& seed) {
    bool single = false;
    Tensor xb = to_batch(x, single);
    if (!single) throw PreconditionError("logits_input_grad expects a single input");
    if (seed.size() != model_->num_classes) throw ShapeError("seed length != num_classes");
    Graph& g = logits_graph(1);
    g.forward({{"x", xb}});
    auto grads = g.backward(reshaped(seed, {1, static_cast<int64_t>(model_->num_classes)}));
    return reshaped(grads.at("x"), x.shape);
}

std::pair<double, Tensor> ModelRuntime::train_step_grads(const Tensor& xb,
                                                         const std::vector<int>& labels,
                                                         std::map<std::string, Tensor>& grads_out) {
    bool single = false;
    Tensor xbg = to_batch(xb, single);
    int64_t B = xbg.shape[0];
    if (static_cast<int64_t>(labels.size()) != B)
        throw PreconditionError("train_step_grads: batch/label count mismatch");
    Graph& g = loss_graph(B);
    Tensor y({B, static_cast<int64_t>(model_->num_classes)});
    for (int64_t i = 0; i < B; ++i) {
        if (labels[i] < 0 || labels[i] >= model_->num_classes)
            throw PreconditionError("label outside [0, num_classes)");
        y[i * model_->num_classes + labels[i]] = 1.0;
    }
    Tensor loss = g.forward({{"x", xbg}, {"target", y}});
    Tensor seed({1});
    seed[0] = 1.0;
    auto grads = g.backward(seed);
    grads_out.clear();
    for (const auto& name : g.param_names()) grads_out[name] = grads.at(name);
    return {loss[0], g.value_of(loss_logits_node_.at(B))};
}

std::pair<Tensor, int> predict(const Classifier& model, const Tensor& x) {
    ModelRuntime rt(model);
    return rt.predict(x);
}

std::pair<double, Tensor> loss_component(const Classifier& model, const Tensor& x, int label) {
    ModelRuntime rt(model);
    return rt.loss_and_input_grad(x, label);
}

void save_model(const Classifier& model, const std::string& path) {
    json j;
    j["format_version"] = 1;
    j["architecture"] = arch_tag(model.arch);
    j["input_shape"] = model.input_shape;
    j["num_classes"] = model.num_classes;
    j["layers"] = json::array();
    for (const auto& [name, w] : model.weights) {
        json layer;
        layer["name"] = name;
        layer["shape"] = w.shape;
        layer["data"] = w.data;
        j["layers"].push_back(layer);
    }
    std::ofstream f(path);
    if (!f) throw IoError("cannot open '" + path + "' for writing");
    f << j.dump(1) << "\n";
}

Classifier load_model(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open '" + path + "'");
    json j;
    try {
        j = json::parse(f);
    } catch (const json::parse_error& e) {
        throw IoError("'" + path + "': malformed JSON at byte offset " + std::to_string(e.byte) +
                      ": " + e.what());
    }
    auto need = [&](const char* field) -> const json& {
        if (!j.contains(field)) throw IoError("'" + path + "': missing field \"" + field + "\"");
        return j.at(field);
    };
    int version = need("format_version").get<int>();
    if (version != 1)
        throw VersionError("'" + path + "': unsupported format_version " +
                           std::to_string(version));
    Classifier c;
    c.arch = arch_from_tag(need("architecture").get<std::string>());
    c.input_shape = need("input_shape").get<Shape>();
    c.num_classes = need("num_classes").get<int>();
    for (const auto& layer : need("layers")) {
        if (!layer.contains("name") || !layer.contains("shape") || !layer.contains("data"))
            throw IoError("'" + path + "': layer entry missing \"name\", \"shape\" or \"data\"");
        std::string name = layer.at("name").get<std::string>();
        Shape shape = layer.at("shape").get<Shape>();
        std::vector<double> data = layer.at("data").get<std::vector<double>>();
        try {
            c.weights[name] = Tensor(shape, std::move(data));
        } catch (const ShapeError& e) {
            throw IoError("'" + path + "': layer \"" + name + "\": " + e.what());
        }
    }
    // Reconstruct MLP hidden sizes from weight shapes.
    if (c.arch == Arch::Mlp) {
        for (size_t i = 1;; ++i) {
            auto it = c.weights.find("W" + std::to_string(i));
            if (it == c.weights.end()) break;
            if (c.weights.count("W" + std::to_string(i + 1)))
                c.hidden.push_back(it->second.shape[1]);
        }
    }
    // Validate against a freshly shaped classifier of the same architecture.
    Classifier ref;
    if (c.arch == Arch::Affine) ref = Classifier::affine(c.input_size(), c.num_classes);
    else if (c.arch == Arch::Mlp) ref = Classifier::mlp(c.input_shape, c.hidden, c.num_classes);
    else ref = Classifier::lenet_lite(c.input_shape, c.num_classes);
    for (const auto& [name, w] : ref.weights) {
        auto it = c.weights.find(name);
        if (it == c.weights.end())
            throw IoError("'" + path + "': missing layer \"" + name + "\"");
        if (it->second.shape != w.shape)
            throw IoError("'" + path + "': layer \"" + name + "\" has shape " +
                          shape_str(it->second.shape) + ", expected " + shape_str(w.shape));
    }
    if (c.weights.size() != ref.weights.size())
        throw IoError("'" + path + "': unexpected extra layers");
    return c;
}

}  // namespace ceval
