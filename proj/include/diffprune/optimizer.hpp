// Copyright (c) 2026 the diffprune authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "diffprune/layers.hpp"

namespace diffprune {

/// Stochastic gradient descent with adaptive first/second moments and bias
/// correction (decay 0.9 / 0.999). Updates run in a fixed parameter order.
template <typename T>
struct Adam {
    double lr = 2e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int64_t step_count = 0;
    std::vector<NamedParam<T>> params;
    std::vector<Tensor<T>> m, v;

    static Adam attach(std::vector<NamedParam<T>> model_params, double lr) {
        Adam opt;
        opt.lr = lr;
        opt.params = std::move(model_params);
        for (const auto& p : opt.params) {
            opt.m.emplace_back(p.tensor.shape());
            opt.v.emplace_back(p.tensor.shape());
            p.tensor.set_requires_grad(true);
        }
        return opt;
    }

    void step() {
        ++step_count;
        double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
        double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
        for (size_t i = 0; i < params.size(); ++i) {
            auto& p = params[i].tensor;
            if (!p.has_grad()) continue;
            auto g = p.grad_view();
            for (int64_t j = 0; j < p.numel(); ++j) {
                double gj = static_cast<double>(g[j]);
                double mj = beta1 * static_cast<double>(m[i][j]) + (1.0 - beta1) * gj;
                double vj = beta2 * static_cast<double>(v[i][j]) + (1.0 - beta2) * gj * gj;
                m[i][j] = static_cast<T>(mj);
                v[i][j] = static_cast<T>(vj);
                p[j] -= static_cast<T>(lr * (mj / bc1) / (std::sqrt(vj / bc2) + eps));
            }
        }
    }

    void zero_grad() {
        for (auto& p : params) p.tensor.zero_grad();
    }
};

}  // namespace diffprune
