// Copyright (c) 2026 the diffprune authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

#include "diffprune/rng.hpp"
#include "diffprune/tensor.hpp"

namespace diffprune {

enum class DatasetKind { gauss8, swissroll, shapes16, external };

inline DatasetKind dataset_kind_from_name(const std::string& s) {
    if (s == "gauss8") return DatasetKind::gauss8;
    if (s == "swissroll") return DatasetKind::swissroll;
    if (s == "shapes16") return DatasetKind::shapes16;
    if (s == "external") return DatasetKind::external;
    throw std::invalid_argument("unknown dataset kind: " + s);
}

inline const char* dataset_kind_name(DatasetKind k) {
    switch (k) {
        case DatasetKind::gauss8: return "gauss8";
        case DatasetKind::swissroll: return "swissroll";
        case DatasetKind::shapes16: return "shapes16";
        case DatasetKind::external: return "external";
    }
    return "?";
}

/// Eight Gaussians with means on a radius-2 circle, std 0.02.
inline Tensor<float> generate_gauss8(int64_t n, uint64_t seed) {
    Rng rng(seed);
    Tensor<float> data({n, 2});
    for (int64_t i = 0; i < n; ++i) {
        int64_t k = rng.uniform_int(0, 7);
        double angle = 2.0 * 3.14159265358979323846 * static_cast<double>(k) / 8.0;
        data[i * 2] = static_cast<float>(2.0 * std::cos(angle) + 0.02 * rng.normal());
        data[i * 2 + 1] = static_cast<float>(2.0 * std::sin(angle) + 0.02 * rng.normal());
    }
    return data;
}

/// Standard 2-D spiral scaled into [-2,2]^2, then jittered with std 0.05.
inline Tensor<float> generate_swissroll(int64_t n, uint64_t seed) {
    Rng rng(seed);
    Tensor<float> data({n, 2});
    const double t_max = 4.5 * 3.14159265358979323846;
    const double scale = 2.0 / t_max;
    for (int64_t i = 0; i < n; ++i) {
        double t = 1.5 * 3.14159265358979323846 * (1.0 + 2.0 * rng.uniform());
        data[i * 2] = static_cast<float>(scale * t * std::cos(t) + 0.05 * rng.normal());
        data[i * 2 + 1] = static_cast<float>(scale * t * std::sin(t) + 0.05 * rng.normal());
    }
    return data;
}

/// 16x16 grayscale images, each with 1-3 filled axis-aligned rectangles or
/// disks painted over a zero background; values stay in [0,1].
inline Tensor<float> generate_shapes16(int64_t n, uint64_t seed) {
    Rng rng(seed);
    Tensor<float> data({n, 1, 16, 16});
    for (int64_t i = 0; i < n; ++i) {
        float* img = data.val().data() + i * 256;
        int64_t count = rng.uniform_int(1, 3);
        for (int64_t s = 0; s < count; ++s) {
            float value = static_cast<float>(0.35 + 0.65 * rng.uniform());
            if (rng.uniform_int(0, 1) == 0) {
                int64_t w = rng.uniform_int(3, 9), h = rng.uniform_int(3, 9);
                int64_t x0 = rng.uniform_int(0, 16 - w), y0 = rng.uniform_int(0, 16 - h);
                for (int64_t y = y0; y < y0 + h; ++y)
                    for (int64_t x = x0; x < x0 + w; ++x) img[y * 16 + x] = value;
            } else {
                int64_t r = rng.uniform_int(2, 5);
                int64_t cx = rng.uniform_int(r, 15 - r), cy = rng.uniform_int(r, 15 - r);
                for (int64_t y = 0; y < 16; ++y)
                    for (int64_t x = 0; x < 16; ++x)
                        if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r) img[y * 16 + x] = value;
            }
        }
    }
    return data;
}

inline Tensor<float> generate_dataset(DatasetKind kind, int64_t n, uint64_t seed) {
    if (n < 1) throw std::invalid_argument("generate_dataset: n must be >= 1");
    switch (kind) {
        case DatasetKind::gauss8: return generate_gauss8(n, seed);
        case DatasetKind::swissroll: return generate_swissroll(n, seed);
        case DatasetKind::shapes16: return generate_shapes16(n, seed);
        case DatasetKind::external: throw std::invalid_argument("generate_dataset: external data must come from a file");
    }
    throw std::invalid_argument("generate_dataset: unknown kind");
}

}  // namespace diffprune
