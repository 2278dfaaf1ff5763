// Copyright (c) 2026 the diffprune authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "diffprune/autodiff.hpp"
#include "diffprune/rng.hpp"
#include "diffprune/tensor.hpp"

namespace diffprune {

template <typename T>
struct NamedParam {
    std::string name;
    Tensor<T> tensor;
};

namespace init {

/// Fan-in scaled uniform: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
template <typename T>
void fan_in_uniform(Tensor<T>& w, int64_t fan_in, Rng& rng) {
    double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (int64_t i = 0; i < w.numel(); ++i) w[i] = static_cast<T>((2.0 * rng.uniform() - 1.0) * bound);
}

}  // namespace init

template <typename T>
struct Linear {
    Tensor<T> weight;  // [out, in]
    Tensor<T> bias;    // [out]

    static Linear create(int64_t in, int64_t out, Rng& rng, bool zero_init = false) {
        Linear l;
        l.weight = Tensor<T>({out, in});
        l.bias = Tensor<T>({out});
        if (!zero_init) init::fan_in_uniform(l.weight, in, rng);
        return l;
    }

    int64_t in_features() const { return weight.dim(1); }
    int64_t out_features() const { return weight.dim(0); }
    int64_t macs() const { return in_features() * out_features(); }

    Tensor<T> forward(Tape<T>& tape, const Tensor<T>& x) const { return tape.linear(x, weight, bias); }

    Linear deep_clone() const { return Linear{weight.deep_copy(), bias.deep_copy()}; }
};

template <typename T>
struct Conv2dLayer {
    Tensor<T> weight;  // [cout, cin, k, k]
    Tensor<T> bias;    // [cout]
    int64_t stride = 1;
    int64_t pad = 1;

    static Conv2dLayer create(int64_t cin, int64_t cout, int64_t k, int64_t stride, int64_t pad,
                              Rng& rng, bool zero_init = false) {
        Conv2dLayer c;
        c.weight = Tensor<T>({cout, cin, k, k});
        c.bias = Tensor<T>({cout});
        c.stride = stride;
        c.pad = pad;
        if (!zero_init) init::fan_in_uniform(c.weight, cin * k * k, rng);
        return c;
    }

    int64_t in_channels() const { return weight.dim(1); }
    int64_t out_channels() const { return weight.dim(0); }
    int64_t kernel() const { return weight.dim(2); }
    int64_t macs(int64_t h_out, int64_t w_out) const {
        return h_out * w_out * out_channels() * in_channels() * kernel() * kernel();
    }

    Tensor<T> forward(Tape<T>& tape, const Tensor<T>& x) const {
        return tape.conv2d(x, weight, bias, stride, pad);
    }

    Conv2dLayer deep_clone() const { return Conv2dLayer{weight.deep_copy(), bias.deep_copy(), stride, pad}; }
};

template <typename T>
struct GroupNormLayer {
    Tensor<T> gamma;  // [channels]
    Tensor<T> beta;   // [channels]
    int64_t unit = 1;  // channels per group, fixed at first construction

    static GroupNormLayer create(int64_t channels, int64_t unit) {
        GroupNormLayer g;
        g.gamma = Tensor<T>({channels}, T(1));
        g.beta = Tensor<T>({channels});
        g.unit = unit;
        return g;
    }

    int64_t channels() const { return gamma.dim(0); }
    int64_t groups() const { return channels() / unit; }

    Tensor<T> forward(Tape<T>& tape, const Tensor<T>& x) const {
        return tape.group_norm(x, groups(), gamma, beta);
    }

    GroupNormLayer deep_clone() const { return GroupNormLayer{gamma.deep_copy(), beta.deep_copy(), unit}; }
};

/// Sinusoidal timestep features followed by a two-layer projection. Equal
/// timesteps always embed identically; dim is fixed at construction.
template <typename T>
struct TimeEmbedding {
    int64_t dim = 0;
    Linear<T> fc1, fc2;

    static TimeEmbedding create(int64_t dim, Rng& rng) {
        if (dim % 2 != 0 || dim < 2) throw std::invalid_argument("TimeEmbedding: dim must be even and >= 2");
        TimeEmbedding e;
        e.dim = dim;
        e.fc1 = Linear<T>::create(dim, dim, rng);
        e.fc2 = Linear<T>::create(dim, dim, rng);
        return e;
    }

    /// Raw sinusoidal features, not recorded on any tape.
    Tensor<T> features(std::span<const int64_t> ts) const {
        int64_t n = static_cast<int64_t>(ts.size()), half = dim / 2;
        Tensor<T> f({n, dim});
        for (int64_t i = 0; i < n; ++i)
            for (int64_t j = 0; j < half; ++j) {
                double freq = std::exp(-std::log(10000.0) * static_cast<double>(j) / static_cast<double>(half));
                double arg = static_cast<double>(ts[i]) * freq;
                f[i * dim + j] = static_cast<T>(std::sin(arg));
                f[i * dim + half + j] = static_cast<T>(std::cos(arg));
            }
        return f;
    }

    Tensor<T> forward(Tape<T>& tape, std::span<const int64_t> ts) const {
        return fc2.forward(tape, tape.silu(fc1.forward(tape, features(ts))));
    }

    int64_t macs() const { return fc1.macs() + fc2.macs(); }

    TimeEmbedding deep_clone() const { return TimeEmbedding{dim, fc1.deep_clone(), fc2.deep_clone()}; }
};

}  // namespace diffprune
