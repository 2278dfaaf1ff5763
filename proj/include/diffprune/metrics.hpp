// Copyright (c) 2026 the diffprune authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "diffprune/diffusion.hpp"
#include "diffprune/tensor.hpp"

namespace diffprune {

struct SsimConfig {
    int64_t window = 7;       // odd, >= 3; uniform (box) window
    double dynamic_range = 1.0;

    double c1() const { return (0.01 * dynamic_range) * (0.01 * dynamic_range); }
    double c2() const { return (0.03 * dynamic_range) * (0.03 * dynamic_range); }
};

namespace detail {

template <typename T>
std::pair<const T*, std::pair<int64_t, int64_t>> single_channel_image(const Tensor<T>& t) {
    Shape s = t.shape();
    while (s.size() > 2) {
        if (s.front() != 1) throw std::invalid_argument("ssim: expected a single-channel image");
        s.erase(s.begin());
    }
    if (s.size() != 2) throw std::invalid_argument("ssim: expected a 2-D image");
    return {t.val().data(), {s[0], s[1]}};
}

}  // namespace detail

/// Mean over sliding uniform windows of the standard SSIM index. Inputs are
/// single-channel images of equal shape; population statistics per window.
template <typename T>
double ssim(const Tensor<T>& a, const Tensor<T>& b, const SsimConfig& cfg = {}) {
    if (!same_shape(a, b)) throw std::invalid_argument("ssim: shape mismatch");
    if (cfg.window < 3 || cfg.window % 2 == 0) throw std::invalid_argument("ssim: window must be odd and >= 3");
    auto [av, adims] = detail::single_channel_image(a);
    auto [bv, bdims] = detail::single_channel_image(b);
    int64_t H = adims.first, W = adims.second, w = cfg.window;
    if (w > H || w > W) throw std::invalid_argument("ssim: window larger than image");

    double c1 = cfg.c1(), c2 = cfg.c2();
    double acc = 0;
    int64_t count = 0;
    double inv = 1.0 / static_cast<double>(w * w);
    for (int64_t y = 0; y + w <= H; ++y)
        for (int64_t x = 0; x + w <= W; ++x) {
            double ma = 0, mb = 0;
            for (int64_t i = 0; i < w; ++i)
                for (int64_t j = 0; j < w; ++j) {
                    ma += av[(y + i) * W + (x + j)];
                    mb += bv[(y + i) * W + (x + j)];
                }
            ma *= inv;
            mb *= inv;
            double va = 0, vb = 0, cov = 0;
            for (int64_t i = 0; i < w; ++i)
                for (int64_t j = 0; j < w; ++j) {
                    double da = av[(y + i) * W + (x + j)] - ma;
                    double db = bv[(y + i) * W + (x + j)] - mb;
                    va += da * da;
                    vb += db * db;
                    cov += da * db;
                }
            va *= inv;
            vb *= inv;
            cov *= inv;
            acc += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            ++count;
        }
    return acc / static_cast<double>(count);
}

struct ConsistencyReport {
    std::vector<double> values;  // one similarity per seed
    double mean = 0;
    double stddev = 0;
    int64_t n_seeds = 0;

    void finalize() {
        n_seeds = static_cast<int64_t>(values.size());
        mean = 0;
        for (double v : values) mean += v;
        if (n_seeds > 0) mean /= static_cast<double>(n_seeds);
        double var = 0;
        for (double v : values) var += (v - mean) * (v - mean);
        stddev = n_seeds > 1 ? std::sqrt(var / static_cast<double>(n_seeds)) : 0.0;
    }
};

namespace detail {

/// Similarity between paired generations: mean per-image SSIM for 4-D image
/// batches, 1 / (1 + MSE) for 2-D point batches. Images are clamped to the
/// dynamic range first, matching SSIM on stored images.
template <typename T>
double generation_similarity(const Tensor<T>& a, const Tensor<T>& b, const SsimConfig& cfg) {
    if (!same_shape(a, b)) throw std::invalid_argument("generation_similarity: shape mismatch");
    if (a.ndim() == 4) {
        int64_t n = a.dim(0), elems = a.numel() / n;
        Shape img{a.dim(1), a.dim(2), a.dim(3)};
        T lo = 0, hi = static_cast<T>(cfg.dynamic_range);
        double acc = 0;
        for (int64_t i = 0; i < n; ++i) {
            Tensor<T> ia(img), ib(img);
            for (int64_t j = 0; j < elems; ++j) {
                ia[j] = std::clamp(a[i * elems + j], lo, hi);
                ib[j] = std::clamp(b[i * elems + j], lo, hi);
            }
            acc += ssim(ia, ib, cfg);
        }
        return acc / static_cast<double>(n);
    }
    double mse = 0;
    for (int64_t i = 0; i < a.numel(); ++i) {
        double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        mse += d * d;
    }
    mse /= static_cast<double>(a.numel());
    return 1.0 / (1.0 + mse);
}

}  // namespace detail

/// Same-seed generation consistency: for every seed both models start from an
/// identical x_T (and share the z sequence under DDPM), then the paired
/// outputs are compared.
template <class MA, class MB>
ConsistencyReport consistency_eval(MA& model_a, MB& model_b, const NoiseSchedule& sched,
                                   int64_t n_seeds, SamplerKind sampler, int64_t sample_steps,
                                   int64_t n_per_seed, uint64_t base_seed,
                                   const SsimConfig& cfg = {}) {
    if (n_seeds < 1 || n_per_seed < 1) throw std::invalid_argument("consistency_eval: need n_seeds, n_per_seed >= 1");
    ConsistencyReport report;
    for (int64_t s = 0; s < n_seeds; ++s) {
        Rng noise(seed_stream(base_seed, static_cast<uint64_t>(s)));
        Tensor<typename MA::scalar_type> x_T =
            normal_like<typename MA::scalar_type>(model_a.sample_shape(n_per_seed), noise);
        Tensor<typename MA::scalar_type> ya, yb;
        if (sampler == SamplerKind::ddim) {
            ya = ddim_sample(model_a, x_T, sched, sample_steps).x0;
            yb = ddim_sample(model_b, x_T, sched, sample_steps).x0;
        } else {
            Rng za(seed_stream(base_seed, static_cast<uint64_t>(s), 1));
            Rng zb(seed_stream(base_seed, static_cast<uint64_t>(s), 1));
            ya = ddpm_sample(model_a, x_T, sched, za).x0;
            yb = ddpm_sample(model_b, x_T, sched, zb).x0;
        }
        report.values.push_back(detail::generation_similarity(ya, yb, cfg));
    }
    report.finalize();
    return report;
}

/// Unbiased squared maximum mean discrepancy between two 2-D point sets under
/// a mixture-of-Gaussians kernel, clamped at zero.
template <typename T>
double mmd_2d(const Tensor<T>& a, const Tensor<T>& b,
              const std::vector<double>& bandwidths = {0.1, 0.25, 0.5, 1.0}) {
    if (a.ndim() != 2 || a.dim(1) != 2 || b.ndim() != 2 || b.dim(1) != 2)
        throw std::invalid_argument("mmd_2d: expected [n,2] point sets");
    int64_t n = a.dim(0), m = b.dim(0);
    if (n < 100 || m < 100) throw std::invalid_argument("mmd_2d: need at least 100 samples per set");
    if (bandwidths.empty()) throw std::invalid_argument("mmd_2d: need at least one bandwidth");

    auto kernel = [&](double dx, double dy) {
        double d2 = dx * dx + dy * dy;
        double k = 0;
        for (double h : bandwidths) k += std::exp(-d2 / (2.0 * h * h));
        return k;
    };
    double kaa = 0, kbb = 0, kab = 0;
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < n; ++j)
            if (i != j) kaa += kernel(a[i * 2] - a[j * 2], a[i * 2 + 1] - a[j * 2 + 1]);
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < m; ++j)
            if (i != j) kbb += kernel(b[i * 2] - b[j * 2], b[i * 2 + 1] - b[j * 2 + 1]);
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < m; ++j) kab += kernel(a[i * 2] - b[j * 2], a[i * 2 + 1] - b[j * 2 + 1]);

    double est = kaa / (static_cast<double>(n) * (n - 1)) + kbb / (static_cast<double>(m) * (m - 1)) -
                 2.0 * kab / (static_cast<double>(n) * m);
    return est > 0.0 ? est : 0.0;
}

}  // namespace diffprune
