#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ceval/errors.hpp"

namespace ceval {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

// Dense row-major tensor of 64-bit floats. 64-bit throughout: metric
// comparisons between explainers can differ by less than 1e-2.
struct Tensor {
    Shape shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(Shape s);
    Tensor(Shape s, std::vector<double> d);

    int64_t size() const { return static_cast<int64_t>(data.size()); }
    int64_t rank() const { return static_cast<int64_t>(shape.size()); }

    double& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
    double operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

    // 2-D accessors for [R, C] tensors.
    double& at2(int64_t r, int64_t c) { return data[static_cast<size_t>(r * shape[1] + c)]; }
    double at2(int64_t r, int64_t c) const { return data[static_cast<size_t>(r * shape[1] + c)]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }
    bool all_finite() const;
};

Tensor zeros(Shape s);
Tensor full(Shape s, double v);
Tensor tensor1d(std::vector<double> v);

// Returns a copy with a new shape of identical element count.
Tensor reshaped(const Tensor& t, Shape s);

double l2_norm(const Tensor& t);
double l2_dist(const Tensor& a, const Tensor& b);
int64_t argmax_index(const Tensor& t);  // ties broken by lowest index

}  // namespace ceval
