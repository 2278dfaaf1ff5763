// Copyright (c) 2026 the diffprune authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "diffprune/tensor.hpp"

namespace diffprune {

/// Writes a batch of [N,1,H,W] images as one binary PGM (P5) tile grid.
/// Values are clamped to [0,1]; tiles are separated by a 1px mid-gray line.
template <typename T>
void write_pgm_grid(const std::string& path, const Tensor<T>& images, int64_t cols = 0) {
    if (images.ndim() != 4 || images.dim(1) != 1)
        throw std::invalid_argument("write_pgm_grid: expected [N,1,H,W] images");
    int64_t n = images.dim(0), H = images.dim(2), W = images.dim(3);
    if (cols <= 0) {
        cols = 1;
        while (cols * cols < n) ++cols;
    }
    int64_t rows = (n + cols - 1) / cols;
    int64_t out_w = cols * W + (cols - 1);
    int64_t out_h = rows * H + (rows - 1);
    std::vector<uint8_t> canvas(static_cast<size_t>(out_w * out_h), 128);

    for (int64_t i = 0; i < n; ++i) {
        int64_t r = i / cols, c = i % cols;
        int64_t oy = r * (H + 1), ox = c * (W + 1);
        const T* img = images.val().data() + i * H * W;
        for (int64_t y = 0; y < H; ++y)
            for (int64_t x = 0; x < W; ++x) {
                double v = std::clamp(static_cast<double>(img[y * W + x]), 0.0, 1.0);
                canvas[static_cast<size_t>((oy + y) * out_w + ox + x)] = static_cast<uint8_t>(v * 255.0 + 0.5);
            }
    }

    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("write_pgm_grid: cannot open " + path);
    os << "P5\n" << out_w << " " << out_h << "\n255\n";
    os.write(reinterpret_cast<const char*>(canvas.data()), static_cast<std::streamsize>(canvas.size()));
    if (!os) throw std::runtime_error("write_pgm_grid: write failed " + path);
}

}  // namespace diffprune
