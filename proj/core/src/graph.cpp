#include "ceval/graph.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>

#include "ceval/rng.hpp"

namespace ceval {

namespace {

// Rows = product of all axes but the last.
int64_t row_count(const Shape& s) {
    int64_t n = 1;
    for (size_t i = 0; i + 1 < s.size(); ++i) n *= s[i];
    return n;
}

void conv_output_extent(int64_t in, int64_t k, Padding pad, int64_t& out, int64_t& pad_lo) {
    if (pad == Padding::Valid) {
        out = in - k + 1;
        pad_lo = 0;
    } else {
        out = in;
        pad_lo = (k - 1) / 2;
    }
}

}  // namespace

NodeId Graph::add_node(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
}

void Graph::check_id(NodeId id, const std::string& ctx) const {
    if (id < 0 || id >= static_cast<NodeId>(nodes_.size()))
        throw PreconditionError(ctx + ": node id out of range");
}

std::string Graph::autoname(const std::string& given, const char* kind) {
    if (!given.empty()) return given;
    return std::string(kind) + "_" + std::to_string(auto_counter_++);
}

NodeId Graph::input(const std::string& name, Shape shape) {
    if (named_.count(name)) throw PreconditionError("duplicate slot name '" + name + "'");
    Node n;
    n.op = Op::Input;
    n.name = name;
    n.shape = std::move(shape);
    NodeId id = add_node(std::move(n));
    named_[name] = id;
    return id;
}

NodeId Graph::param(const std::string& name, Tensor initial) {
    if (named_.count(name)) throw PreconditionError("duplicate slot name '" + name + "'");
    Node n;
    n.op = Op::Param;
    n.name = name;
    n.shape = initial.shape;
    n.value = std::move(initial);
    NodeId id = add_node(std::move(n));
    named_[name] = id;
    return id;
}

NodeId Graph::matmul(NodeId a, NodeId b, const std::string& name) {
    check_id(a, "matmul");
    check_id(b, "matmul");
    const Shape& sa = nodes_[a].shape;
    const Shape& sb = nodes_[b].shape;
    Node n;
    n.name = autoname(name, "matmul");
    if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0])
        throw ShapeError("matmul node '" + n.name + "': " + shape_str(sa) + " x " + shape_str(sb));
    n.op = Op::MatMul;
    n.inputs = {a, b};
    n.shape = {sa[0], sb[1]};
    return add_node(std::move(n));
}

NodeId Graph::add(NodeId a, NodeId b, const std::string& name) {
    check_id(a, "add");
    check_id(b, "add");
    const Shape& sa = nodes_[a].shape;
    const Shape& sb = nodes_[b].shape;
    Node n;
    n.name = autoname(name, "add");
    bool broadcast = sa.size() >= 2 && sb.size() == 1 && sa.back() == sb[0];
    if (!(sa == sb || broadcast))
        throw ShapeError("add node '" + n.name + "': " + shape_str(sa) + " + " + shape_str(sb));
    n.op = Op::Add;
    n.inputs = {a, b};
    n.shape = sa;
    return add_node(std::move(n));
}

NodeId Graph::relu(NodeId a, const std::string& name) {
    check_id(a, "relu");
    Node n;
    n.op = Op::Relu;
    n.name = autoname(name, "relu");
    n.inputs = {a};
    n.shape = nodes_[a].shape;
    return add_node(std::move(n));
}

NodeId Graph::tanh(NodeId a, const std::string& name) {
    check_id(a, "tanh");
    Node n;
    n.op = Op::Tanh;
    n.name = autoname(name, "tanh");
    n.inputs = {a};
    n.shape = nodes_[a].shape;
    return add_node(std::move(n));
}

NodeId Graph::mul(NodeId a, NodeId b, const std::string& name) {
    check_id(a, "mul");
    check_id(b, "mul");
    Node n;
    n.name = autoname(name, "mul");
    if (nodes_[a].shape != nodes_[b].shape)
        throw ShapeError("mul node '" + n.name + "': " + shape_str(nodes_[a].shape) + " vs " +
                         shape_str(nodes_[b].shape));
    n.op = Op::Mul;
    n.inputs = {a, b};
    n.shape = nodes_[a].shape;
    return add_node(std::move(n));
}

NodeId Graph::conv2d(NodeId x, NodeId w, NodeId bias, Padding pad, const std::string& name) {
    check_id(x, "conv2d");
    check_id(w, "conv2d");
    check_id(bias, "conv2d");
    const Shape& sx = nodes_[x].shape;
    const Shape& sw = nodes_[w].shape;
    const Shape& sb = nodes_[bias].shape;
    Node n;
    n.name = autoname(name, "conv2d");
    if (sx.size() != 4 || sw.size() != 4 || sx[1] != sw[1])
        throw ShapeError("conv2d node '" + n.name + "': x " + shape_str(sx) + " w " + shape_str(sw));
    if (sb.size() != 1 || sb[0] != sw[0])
        throw ShapeError("conv2d node '" + n.name + "': bias " + shape_str(sb));
    if (pad == Padding::Same && (sw[2] % 2 == 0 || sw[3] % 2 == 0))
        throw ShapeError("conv2d node '" + n.name + "': same padding needs odd kernel");
    int64_t oh, ow, ph, pw;
    conv_output_extent(sx[2], sw[2], pad, oh, ph);
    conv_output_extent(sx[3], sw[3], pad, ow, pw);
    if (oh <= 0 || ow <= 0)
        throw ShapeError("conv2d node '" + n.name + "': kernel larger than input");
    n.op = Op::Conv2d;
    n.inputs = {x, w, bias};
    n.padding = pad;
    n.shape = {sx[0], sw[0], oh, ow};
    return add_node(std::move(n));
}

NodeId Graph::maxpool2(NodeId x, const std::string& name) {
    check_id(x, "maxpool2");
    const Shape& sx = nodes_[x].shape;
    Node n;
    n.name = autoname(name, "maxpool2");
    if (sx.size() != 4 || sx[2] < 2 || sx[3] < 2)
        throw ShapeError("maxpool2 node '" + n.name + "': x " + shape_str(sx));
    n.op = Op::MaxPool2;
    n.inputs = {x};
    n.shape = {sx[0], sx[1], sx[2] / 2, sx[3] / 2};
    return add_node(std::move(n));
}

NodeId Graph::flatten(NodeId x, const std::string& name) {
    check_id(x, "flatten");
    const Shape& sx = nodes_[x].shape;
    Node n;
    n.name = autoname(name, "flatten");
    if (sx.empty()) throw ShapeError("flatten node '" + n.name + "': scalar input");
    int64_t rest = 1;
    for (size_t i = 1; i < sx.size(); ++i) rest *= sx[i];
    n.op = Op::Flatten;
    n.inputs = {x};
    n.shape = {sx[0], rest};
    return add_node(std::move(n));
}

NodeId Graph::softmax(NodeId x, const std::string& name) {
    check_id(x, "softmax");
    Node n;
    n.op = Op::Softmax;
    n.name = autoname(name, "softmax");
    n.inputs = {x};
    n.shape = nodes_[x].shape;
    if (n.shape.empty() || n.shape.back() < 1)
        throw ShapeError("softmax node '" + n.name + "': bad shape");
    return add_node(std::move(n));
}

NodeId Graph::cross_entropy(NodeId logits, NodeId target, const std::string& name) {
    check_id(logits, "cross_entropy");
    check_id(target, "cross_entropy");
    Node n;
    n.name = autoname(name, "cross_entropy");
    if (nodes_[logits].shape != nodes_[target].shape || nodes_[logits].shape.size() != 2)
        throw ShapeError("cross_entropy node '" + n.name + "': logits " +
                         shape_str(nodes_[logits].shape) + " target " +
                         shape_str(nodes_[target].shape));
    n.op = Op::CrossEntropy;
    n.inputs = {logits, target};
    n.shape = {1};
    return add_node(std::move(n));
}

void Graph::set_output(NodeId id) {
    check_id(id, "set_output");
    output_ = id;
}

Tensor& Graph::param_value(const std::string& name) {
    auto it = named_.find(name);
    if (it == named_.end()) throw PreconditionError("unknown slot '" + name + "'");
    Node& n = nodes_[it->second];
    if (n.op != Op::Param) throw PreconditionError("slot '" + name + "' is not a param");
    forward_done_ = false;
    return n.value;
}

const Tensor& Graph::value_of(NodeId id) const {
    check_id(id, "value_of");
    if (!forward_done_) throw PreconditionError("value_of before forward");
    return nodes_[id].value;
}

const Shape& Graph::shape_of(NodeId id) const {
    check_id(id, "shape_of");
    return nodes_[id].shape;
}

NodeId Graph::node_by_name(const std::string& name) const {
    auto it = named_.find(name);
    if (it == named_.end()) throw PreconditionError("unknown slot '" + name + "'");
    return it->second;
}

std::vector<std::string> Graph::input_names() const {
    std::vector<std::string> out;
    for (const auto& [name, id] : named_)
        if (nodes_[id].op == Op::Input) out.push_back(name);
    return out;
}

std::vector<std::string> Graph::param_names() const {
    std::vector<std::string> out;
    for (const auto& [name, id] : named_)
        if (nodes_[id].op == Op::Param) out.push_back(name);
    return out;
}

double Graph::min_kink_margin() const {
    if (!forward_done_) throw PreconditionError("min_kink_margin before forward");
    double margin = std::numeric_limits<double>::infinity();
    for (const auto& n : nodes_) {
        if (n.op == Op::Relu) {
            const Tensor& x = nodes_[n.inputs[0]].value;
            for (double v : x.data) margin = std::min(margin, std::abs(v));
        } else if (n.op == Op::MaxPool2) {
            const Tensor& x = nodes_[n.inputs[0]].value;
            int64_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
            int64_t OH = n.shape[2], OW = n.shape[3];
            for (int64_t b0 = 0; b0 < N; ++b0)
                for (int64_t c = 0; c < C; ++c)
                    for (int64_t oh = 0; oh < OH; ++oh)
                        for (int64_t ow = 0; ow < OW; ++ow) {
                            double top1 = -std::numeric_limits<double>::infinity();
                            double top2 = top1;
                            for (int64_t dh = 0; dh < 2; ++dh)
                                for (int64_t dw = 0; dw < 2; ++dw) {
                                    double v =
                                        x[((b0 * C + c) * H + oh * 2 + dh) * W + ow * 2 + dw];
                                    if (v > top1) {
                                        top2 = top1;
                                        top1 = v;
                                    } else if (v > top2) {
                                        top2 = v;
                                    }
                                }
                            // a dead (relu-clamped) runner-up cannot catch up
                            // under a small perturbation unless its own relu
                            // margin is tiny, which the relu term captures
                            if (top2 > 0.0) margin = std::min(margin, top1 - top2);
                        }
        }
    }
    return margin;
}

void Graph::eval(Node& n) {
    auto in = [&](int i) -> Node& { return nodes_[n.inputs[static_cast<size_t>(i)]]; };
    switch (n.op) {
        case Op::Input:
            if (!n.bound)
                throw PreconditionError("input '" + n.name + "' not bound for forward");
            break;
        case Op::Param:
            if (n.value.shape != n.shape)
                throw ShapeError("param '" + n.name + "' value shape " + shape_str(n.value.shape) +
                                 " != declared " + shape_str(n.shape));
            break;
        case Op::MatMul: {
            const Tensor& a = in(0).value;
            const Tensor& b = in(1).value;
            int64_t R = a.shape[0], K = a.shape[1], C = b.shape[1];
            n.value = Tensor(n.shape);
            for (int64_t r = 0; r < R; ++r) {
                double* out = &n.value.data[static_cast<size_t>(r * C)];
                const double* arow = &a.data[static_cast<size_t>(r * K)];
                for (int64_t k = 0; k < K; ++k) {
                    double av = arow[k];
                    if (av == 0.0) continue;
                    const double* brow = &b.data[static_cast<size_t>(k * C)];
                    for (int64_t c = 0; c < C; ++c) out[c] += av * brow[c];
                }
            }
            break;
        }
        case Op::Add: {
            const Tensor& a = in(0).value;
            const Tensor& b = in(1).value;
            n.value = a;
            if (a.shape == b.shape) {
                for (int64_t i = 0; i < a.size(); ++i) n.value[i] += b[i];
            } else {
                int64_t C = b.shape[0];
                int64_t R = a.size() / C;
                for (int64_t r = 0; r < R; ++r)
                    for (int64_t c = 0; c < C; ++c) n.value[r * C + c] += b[c];
            }
            break;
        }
        case Op::Relu: {
            const Tensor& a = in(0).value;
            n.value = a;
            for (auto& v : n.value.data) v = v > 0.0 ? v : 0.0;
            break;
        }
        case Op::Tanh: {
            const Tensor& a = in(0).value;
            n.value = a;
            for (auto& v : n.value.data) v = std::tanh(v);
            break;
        }
        case Op::Mul: {
            const Tensor& a = in(0).value;
            const Tensor& b = in(1).value;
            n.value = a;
            for (int64_t i = 0; i < a.size(); ++i) n.value[i] *= b[i];
            break;
        }
        case Op::Conv2d: {
            const Tensor& x = in(0).value;
            const Tensor& w = in(1).value;
            const Tensor& bias = in(2).value;
            int64_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
            int64_t F = w.shape[0], KH = w.shape[2], KW = w.shape[3];
            int64_t OH = n.shape[2], OW = n.shape[3];
            int64_t ph = 0, pw = 0, tmp;
            conv_output_extent(H, KH, n.padding, tmp, ph);
            conv_output_extent(W, KW, n.padding, tmp, pw);
            n.value = Tensor(n.shape);
            for (int64_t b0 = 0; b0 < N; ++b0)
                for (int64_t f = 0; f < F; ++f)
                    for (int64_t oh = 0; oh < OH; ++oh)
                        for (int64_t ow = 0; ow < OW; ++ow) {
                            double acc = bias[f];
                            for (int64_t c = 0; c < C; ++c)
                                for (int64_t kh = 0; kh < KH; ++kh) {
                                    int64_t ih = oh + kh - ph;
                                    if (ih < 0 || ih >= H) continue;
                                    const double* xrow =
                                        &x.data[static_cast<size_t>(((b0 * C + c) * H + ih) * W)];
                                    const double* wrow =
                                        &w.data[static_cast<size_t>(((f * C + c) * KH + kh) * KW)];
                                    for (int64_t kw = 0; kw < KW; ++kw) {
                                        int64_t iw = ow + kw - pw;
                                        if (iw < 0 || iw >= W) continue;
                                        acc += xrow[iw] * wrow[kw];
                                    }
                                }
                            n.value[((b0 * F + f) * OH + oh) * OW + ow] = acc;
                        }
            break;
        }
        case Op::MaxPool2: {
            const Tensor& x = in(0).value;
            int64_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
            int64_t OH = n.shape[2], OW = n.shape[3];
            n.value = Tensor(n.shape);
            n.argsel.assign(static_cast<size_t>(n.value.size()), 0);
            for (int64_t b0 = 0; b0 < N; ++b0)
                for (int64_t c = 0; c < C; ++c)
                    for (int64_t oh = 0; oh < OH; ++oh)
                        for (int64_t ow = 0; ow < OW; ++ow) {
                            int64_t best_idx = -1;
                            double best = 0.0;
                            for (int64_t dh = 0; dh < 2; ++dh)
                                for (int64_t dw = 0; dw < 2; ++dw) {
                                    int64_t ih = oh * 2 + dh, iw = ow * 2 + dw;
                                    int64_t idx = ((b0 * C + c) * H + ih) * W + iw;
                                    double v = x[idx];
                                    // first max wins: deterministic ties
                                    if (best_idx < 0 || v > best) {
                                        best = v;
                                        best_idx = idx;
                                    }
                                }
                            int64_t oidx = ((b0 * C + c) * OH + oh) * OW + ow;
                            n.value[oidx] = best;
                            n.argsel[static_cast<size_t>(oidx)] = best_idx;
                        }
            break;
        }
        case Op::Flatten: {
            n.value = in(0).value;
            n.value.shape = n.shape;
            break;
        }
        case Op::Softmax: {
            const Tensor& x = in(0).value;
            int64_t C = x.shape.back();
            int64_t R = row_count(x.shape);
            n.value = Tensor(n.shape);
            for (int64_t r = 0; r < R; ++r) {
                const double* row = &x.data[static_cast<size_t>(r * C)];
                double* out = &n.value.data[static_cast<size_t>(r * C)];
                double mx = row[0];
                for (int64_t c = 1; c < C; ++c) mx = std::max(mx, row[c]);
                double sum = 0.0;
                for (int64_t c = 0; c < C; ++c) {
                    out[c] = std::exp(row[c] - mx);
                    sum += out[c];
                }
                for (int64_t c = 0; c < C; ++c) out[c] /= sum;
            }
            break;
        }
        case Op::CrossEntropy: {
            const Tensor& z = in(0).value;
            const Tensor& y = in(1).value;
            int64_t R = z.shape[0], C = z.shape[1];
            double total = 0.0;
            for (int64_t r = 0; r < R; ++r) {
                const double* zr = &z.data[static_cast<size_t>(r * C)];
                const double* yr = &y.data[static_cast<size_t>(r * C)];
                double mx = zr[0];
                for (int64_t c = 1; c < C; ++c) mx = std::max(mx, zr[c]);
                double se = 0.0;
                for (int64_t c = 0; c < C; ++c) se += std::exp(zr[c] - mx);
                double lse = mx + std::log(se);
                double dot = 0.0;
                for (int64_t c = 0; c < C; ++c) dot += zr[c] * yr[c];
                total += lse - dot;
            }
            n.value = Tensor({1});
            n.value[0] = total / static_cast<double>(R);
            break;
        }
    }
}

Tensor Graph::forward(const std::map<std::string, Tensor>& inputs) {
    if (output_ < 0) throw PreconditionError("forward: no output set");
    for (auto& n : nodes_)
        if (n.op == Op::Input) n.bound = false;
    for (const auto& [name, value] : inputs) {
        auto it = named_.find(name);
        if (it == named_.end()) throw PreconditionError("forward: unknown input '" + name + "'");
        Node& n = nodes_[it->second];
        if (n.op != Op::Input) throw PreconditionError("forward: '" + name + "' is not an input");
        if (value.shape != n.shape)
            throw ShapeError("input '" + name + "': got " + shape_str(value.shape) +
                             ", declared " + shape_str(n.shape));
        n.value = value;
        n.bound = true;
    }
    for (auto& n : nodes_) eval(n);
    forward_done_ = true;
    return nodes_[output_].value;
}

void Graph::backprop(Node& n) {
    auto gin = [&](int i) -> Tensor& { return nodes_[n.inputs[static_cast<size_t>(i)]].grad; };
    auto vin = [&](int i) -> const Tensor& {
        return nodes_[n.inputs[static_cast<size_t>(i)]].value;
    };
    const Tensor& g = n.grad;
    switch (n.op) {
        case Op::Input:
        case Op::Param:
            break;
        case Op::MatMul: {
            const Tensor& a = vin(0);
            const Tensor& b = vin(1);
            Tensor& ga = gin(0);
            Tensor& gb = gin(1);
            int64_t R = a.shape[0], K = a.shape[1], C = b.shape[1];
            // dA = g . B^T
            for (int64_t r = 0; r < R; ++r)
                for (int64_t k = 0; k < K; ++k) {
                    double acc = 0.0;
                    const double* grow = &g.data[static_cast<size_t>(r * C)];
                    const double* brow = &b.data[static_cast<size_t>(k * C)];
                    for (int64_t c = 0; c < C; ++c) acc += grow[c] * brow[c];
                    ga[r * K + k] += acc;
                }
            // dB = A^T . g
            for (int64_t k = 0; k < K; ++k)
                for (int64_t r = 0; r < R; ++r) {
                    double av = a[r * K + k];
                    if (av == 0.0) continue;
                    const double* grow = &g.data[static_cast<size_t>(r * C)];
                    double* brow = &gb.data[static_cast<size_t>(k * C)];
                    for (int64_t c = 0; c < C; ++c) brow[c] += av * grow[c];
                }
            break;
        }
        case Op::Add: {
            Tensor& ga = gin(0);
            Tensor& gb = gin(1);
            for (int64_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            if (vin(0).shape == vin(1).shape) {
                for (int64_t i = 0; i < g.size(); ++i) gb[i] += g[i];
            } else {
                int64_t C = vin(1).shape[0];
                int64_t R = g.size() / C;
                for (int64_t r = 0; r < R; ++r)
                    for (int64_t c = 0; c < C; ++c) gb[c] += g[r * C + c];
            }
            break;
        }
        case Op::Relu: {
            const Tensor& x = vin(0);
            Tensor& gx = gin(0);
            for (int64_t i = 0; i < g.size(); ++i)
                if (x[i] > 0.0) gx[i] += g[i];
            break;
        }
        case Op::Tanh: {
            Tensor& gx = gin(0);
            for (int64_t i = 0; i < g.size(); ++i) {
                double t = n.value[i];
                gx[i] += g[i] * (1.0 - t * t);
            }
            break;
        }
        case Op::Mul: {
            const Tensor& a = vin(0);
            const Tensor& b = vin(1);
            Tensor& ga = gin(0);
            Tensor& gb = gin(1);
            for (int64_t i = 0; i < g.size(); ++i) {
                ga[i] += g[i] * b[i];
                gb[i] += g[i] * a[i];
            }
            break;
        }
        case Op::Conv2d: {
            const Tensor& x = vin(0);
            const Tensor& w = vin(1);
            Tensor& gx = gin(0);
            Tensor& gw = gin(1);
            Tensor& gb = gin(2);
            int64_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
            int64_t F = w.shape[0], KH = w.shape[2], KW = w.shape[3];
            int64_t OH = n.shape[2], OW = n.shape[3];
            int64_t ph = 0, pw = 0, tmp;
            conv_output_extent(H, KH, n.padding, tmp, ph);
            conv_output_extent(W, KW, n.padding, tmp, pw);
            for (int64_t b0 = 0; b0 < N; ++b0)
                for (int64_t f = 0; f < F; ++f)
                    for (int64_t oh = 0; oh < OH; ++oh)
                        for (int64_t ow = 0; ow < OW; ++ow) {
                            double gv = g[((b0 * F + f) * OH + oh) * OW + ow];
                            if (gv == 0.0) continue;
                            gb[f] += gv;
                            for (int64_t c = 0; c < C; ++c)
                                for (int64_t kh = 0; kh < KH; ++kh) {
                                    int64_t ih = oh + kh - ph;
                                    if (ih < 0 || ih >= H) continue;
                                    for (int64_t kw = 0; kw < KW; ++kw) {
                                        int64_t iw = ow + kw - pw;
                                        if (iw < 0 || iw >= W) continue;
                                        int64_t xi = ((b0 * C + c) * H + ih) * W + iw;
                                        int64_t wi = ((f * C + c) * KH + kh) * KW + kw;
                                        gx[xi] += gv * w[wi];
                                        gw[wi] += gv * x[xi];
                                    }
                                }
                        }
            break;
        }
        case Op::MaxPool2: {
            Tensor& gx = gin(0);
            for (int64_t i = 0; i < g.size(); ++i)
                gx[n.argsel[static_cast<size_t>(i)]] += g[i];
            break;
        }
        case Op::Flatten: {
            Tensor& gx = gin(0);
            for (int64_t i = 0; i < g.size(); ++i) gx[i] += g[i];
            break;
        }
        case Op::Softmax: {
            Tensor& gx = gin(0);
            int64_t C = n.shape.back();
            int64_t R = row_count(n.shape);
            for (int64_t r = 0; r < R; ++r) {
                const double* y = &n.value.data[static_cast<size_t>(r * C)];
                const double* gy = &g.data[static_cast<size_t>(r * C)];
                double dot = 0.0;
                for (int64_t c = 0; c < C; ++c) dot += gy[c] * y[c];
                for (int64_t c = 0; c < C; ++c) gx[r * C + c] += y[c] * (gy[c] - dot);
            }
            break;
        }
        case Op::CrossEntropy: {
            const Tensor& z = vin(0);
            const Tensor& y = vin(1);
            Tensor& gz = gin(0);
            Tensor& gy = gin(1);
            int64_t R = z.shape[0], C = z.shape[1];
            double scale = g[0] / static_cast<double>(R);
            for (int64_t r = 0; r < R; ++r) {
                const double* zr = &z.data[static_cast<size_t>(r * C)];
                double mx = zr[0];
                for (int64_t c = 1; c < C; ++c) mx = std::max(mx, zr[c]);
                double se = 0.0;
                for (int64_t c = 0; c < C; ++c) se += std::exp(zr[c] - mx);
                for (int64_t c = 0; c < C; ++c) {
                    double p = std::exp(zr[c] - mx) / se;
                    gz[r * C + c] += scale * (p - y[r * C + c]);
                    gy[r * C + c] += scale * -zr[c];
                }
            }
            break;
        }
    }
}

std::map<std::string, Tensor> Graph::backward(const Tensor& seed) {
    if (!forward_done_) throw PreconditionError("backward before forward");
    Node& out = nodes_[output_];
    if (seed.shape != out.shape)
        throw ShapeError("backward seed " + shape_str(seed.shape) + " != output " +
                         shape_str(out.shape));
    for (auto& n : nodes_) n.grad = Tensor(n.shape);
    out.grad = seed;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) backprop(*it);
    std::map<std::string, Tensor> grads;
    for (const auto& [name, id] : named_) grads[name] = nodes_[id].grad;
    return grads;
}

double finite_diff_check(Graph& g, const std::map<std::string, Tensor>& at, double h) {
    std::vector<std::string> slots = g.input_names();
    return finite_diff_check(g, at, h, slots, -1, 0);
}

double finite_diff_check(Graph& g, const std::map<std::string, Tensor>& at, double h,
                         const std::vector<std::string>& slots, int64_t max_coords,
                         uint64_t subsample_seed) {
    if (!(h > 0.0)) throw PreconditionError("finite_diff_check: h must be positive");
    Tensor out = g.forward(at);
    Tensor seed = full(out.shape, 1.0);
    auto grads = g.backward(seed);

    auto scalar_at = [&](const std::map<std::string, Tensor>& point) {
        Tensor o = g.forward(point);
        double s = 0.0;
        for (double v : o.data) s += v;
        return s;
    };

    double worst = 0.0;
    for (const auto& slot : slots) {
        bool is_param = false;
        for (const auto& p : g.param_names())
            if (p == slot) is_param = true;

        Tensor base = is_param ? g.param_value(slot) : at.at(slot);
        const Tensor& analytic = grads.at(slot);

        std::vector<int64_t> coords;
        if (max_coords > 0 && base.size() > max_coords) {
            Rng rng(subsample_seed ^ std::hash<std::string>{}(slot));
            for (int64_t i = 0; i < max_coords; ++i) coords.push_back(rng.uniform_int(base.size()));
        } else {
            coords.resize(static_cast<size_t>(base.size()));
            for (int64_t i = 0; i < base.size(); ++i) coords[static_cast<size_t>(i)] = i;
        }

        for (int64_t i : coords) {
            double saved = base[i];
            double fp, fm;
            if (is_param) {
                g.param_value(slot)[i] = saved + h;
                fp = scalar_at(at);
                g.param_value(slot)[i] = saved - h;
                fm = scalar_at(at);
                g.param_value(slot)[i] = saved;
            } else {
                auto probe = at;
                probe[slot][i] = saved + h;
                fp = scalar_at(probe);
                probe[slot][i] = saved - h;
                fm = scalar_at(probe);
            }
            double fd = (fp - fm) / (2.0 * h);
            double err = std::abs(analytic[i] - fd) / std::max(1e-12, std::abs(analytic[i]));
            worst = std::max(worst, err);
        }
    }
    // restore caches for the unperturbed point
    g.forward(at);
    g.backward(seed);
    return worst;
}

}  // namespace ceval
