#include "ceval/tensor.hpp"

#include <cmath>

namespace ceval {

int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) {
        if (d < 0) throw ShapeError("negative extent in shape " + shape_str(s));
        n *= d;
    }
    return n;
}

std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += ", ";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

Tensor::Tensor(Shape s) : shape(std::move(s)), data(static_cast<size_t>(shape_numel(shape)), 0.0) {}

Tensor::Tensor(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    if (static_cast<int64_t>(data.size()) != shape_numel(shape))
        throw ShapeError("data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
}

bool Tensor::all_finite() const {
    for (double v : data)
        if (!std::isfinite(v)) return false;
    return true;
}

Tensor zeros(Shape s) { return Tensor(std::move(s)); }

Tensor full(Shape s, double v) {
    Tensor t(std::move(s));
    for (auto& x : t.data) x = v;
    return t;
}

Tensor tensor1d(std::vector<double> v) {
    Shape s{static_cast<int64_t>(v.size())};
    return Tensor(std::move(s), std::move(v));
}

Tensor reshaped(const Tensor& t, Shape s) {
    if (shape_numel(s) != t.size())
        throw ShapeError("cannot reshape " + shape_str(t.shape) + " to " + shape_str(s));
    Tensor out = t;
    out.shape = std::move(s);
    return out;
}

double l2_norm(const Tensor& t) {
    double acc = 0.0;
    for (double v : t.data) acc += v * v;
    return std::sqrt(acc);
}

double l2_dist(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw ShapeError("l2_dist shape mismatch");
    double acc = 0.0;
    for (int64_t i = 0; i < a.size(); ++i) {
        double d = a[i] - b[i];
        acc += d * d;
    }
    return std::sqrt(acc);
}

int64_t argmax_index(const Tensor& t) {
    if (t.size() == 0) throw PreconditionError("argmax of empty tensor");
    int64_t best = 0;
    for (int64_t i = 1; i < t.size(); ++i)
        if (t[i] > t[best]) best = i;
    return best;
}

}  // namespace ceval
