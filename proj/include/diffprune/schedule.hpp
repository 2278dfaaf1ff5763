// Copyright (c) 2026 the diffprune authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace diffprune {

/// Per-timestep variance schedule. Arrays are stored in double and indexed
/// 1-based through the accessors (t in [1, T]); alpha_bar(t) is the running
/// product of alpha up to t.
struct NoiseSchedule {
    int64_t T = 0;
    double beta_start = 0, beta_end = 0;
    std::vector<double> betas, alphas, alpha_bars, sigmas;

    double beta(int64_t t) const { return betas[check(t)]; }
    double alpha(int64_t t) const { return alphas[check(t)]; }
    double alpha_bar(int64_t t) const { return alpha_bars[check(t)]; }
    double sigma(int64_t t) const { return sigmas[check(t)]; }

    size_t check(int64_t t) const {
        if (t < 1 || t > T) throw std::out_of_range("schedule: t=" + std::to_string(t) + " outside [1," + std::to_string(T) + "]");
        return static_cast<size_t>(t - 1);
    }
};

/// Betas linearly spaced over [beta_start, beta_end], endpoints inclusive.
inline NoiseSchedule make_linear_schedule(int64_t T, double beta_start, double beta_end) {
    if (T < 1) throw std::invalid_argument("make_linear_schedule: T must be >= 1");
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
        throw std::invalid_argument("make_linear_schedule: need 0 < beta_start <= beta_end < 1");
    NoiseSchedule s;
    s.T = T;
    s.beta_start = beta_start;
    s.beta_end = beta_end;
    s.betas.resize(static_cast<size_t>(T));
    s.alphas.resize(static_cast<size_t>(T));
    s.alpha_bars.resize(static_cast<size_t>(T));
    s.sigmas.resize(static_cast<size_t>(T));
    double running = 1.0;
    for (int64_t t = 0; t < T; ++t) {
        double b = (T == 1) ? beta_start
                            : beta_start + (beta_end - beta_start) * static_cast<double>(t) / static_cast<double>(T - 1);
        s.betas[t] = b;
        s.alphas[t] = 1.0 - b;
        running *= s.alphas[t];
        s.alpha_bars[t] = running;
        s.sigmas[t] = std::sqrt(b);
    }
    return s;
}

/// Magnification of a one-off prediction error injected at step t as it
/// propagates through the remaining reverse steps: beta_t / sqrt(abar_t (1 - abar_t)).
inline double amplification_factor(int64_t t, const NoiseSchedule& s) {
    double ab = s.alpha_bar(t);
    return s.beta(t) / std::sqrt(ab * (1.0 - ab));
}

}  // namespace diffprune
