#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ceval/tensor.hpp"

namespace ceval {

struct Dataset {
    std::vector<Tensor> images;  // each in [0,1]
    std::vector<int> labels;
    std::string name;
    std::string split;  // "train" or "test"

    int64_t size() const { return static_cast<int64_t>(images.size()); }
    int num_classes() const;
};

// IDX as distributed for MNIST: big-endian magic 0x00000803 (images) /
// 0x00000801 (labels), big-endian u32 dimension sizes, unsigned bytes.
// Pixels are scaled by 1/255. Errors carry the byte offset.
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

// Inverse of load_idx for round-trip tests and for exporting synthetic data.
// Pixel values are quantized to bytes (round(v*255)).
void write_idx(const Dataset& d, const std::string& images_path, const std::string& labels_path);

// Synthetic n-dimensional blobs: one simplex-axis mean per class, unit noise,
// squeezed into [0,1]. separation is the class distance in noise units.
Dataset make_gaussian_blobs(int64_t n_dims, int n_classes, int64_t n_per_class, double separation,
                            uint64_t seed);

// Procedurally rendered 28x28 grayscale digits (10 classes) with jitter in
// position, scale, rotation and stroke width plus pixel noise. Deterministic
// by (seed, index). Stands in for MNIST when the real IDX files are not
// available; same shapes, same [0,1] range.
Dataset make_synthetic_digits(int64_t count, uint64_t seed, const std::string& split = "train");

// Uniform subset without replacement, deterministic by seed. The subset keeps
// the original index order, so sample(d, d.size(), s) is the identity.
Dataset sample(const Dataset& d, int64_t count, uint64_t seed);

}  // namespace ceval
