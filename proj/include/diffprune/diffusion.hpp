// Copyright (c) 2026 the diffprune authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "diffprune/autodiff.hpp"
#include "diffprune/rng.hpp"
#include "diffprune/schedule.hpp"
#include "diffprune/tensor.hpp"

namespace diffprune {

template <typename T>
Tensor<T> take_rows(const Tensor<T>& data, std::span<const int64_t> idx) {
    int64_t row = data.numel() / data.dim(0);
    Shape shape = data.shape();
    shape[0] = static_cast<int64_t>(idx.size());
    Tensor<T> out(shape);
    for (size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] < 0 || idx[i] >= data.dim(0)) throw std::out_of_range("take_rows: index out of range");
        for (int64_t j = 0; j < row; ++j) out[static_cast<int64_t>(i) * row + j] = data[idx[i] * row + j];
    }
    return out;
}

template <typename T>
Tensor<T> normal_like(const Shape& shape, Rng& rng) {
    Tensor<T> t(shape);
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(rng.normal());
    return t;
}

/// Forward diffusion: sqrt(abar_t) x0 + sqrt(1 - abar_t) eps. Plain value math,
/// never recorded on a tape.
template <typename T>
Tensor<T> q_sample(const Tensor<T>& x0, int64_t t, const Tensor<T>& eps, const NoiseSchedule& s) {
    if (!same_shape(x0, eps)) throw std::invalid_argument("q_sample: x0/eps shape mismatch");
    double ab = s.alpha_bar(t);
    T a = static_cast<T>(std::sqrt(ab)), b = static_cast<T>(std::sqrt(1.0 - ab));
    Tensor<T> out(x0.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = a * x0[i] + b * eps[i];
    return out;
}

/// Same with a per-sample timestep vector (rows of x0 are samples).
template <typename T>
Tensor<T> q_sample(const Tensor<T>& x0, std::span<const int64_t> ts, const Tensor<T>& eps,
                   const NoiseSchedule& s) {
    if (!same_shape(x0, eps)) throw std::invalid_argument("q_sample: x0/eps shape mismatch");
    if (static_cast<int64_t>(ts.size()) != x0.dim(0)) throw std::invalid_argument("q_sample: ts length != batch");
    int64_t row = x0.numel() / x0.dim(0);
    Tensor<T> out(x0.shape());
    for (int64_t n = 0; n < x0.dim(0); ++n) {
        double ab = s.alpha_bar(ts[n]);
        T a = static_cast<T>(std::sqrt(ab)), b = static_cast<T>(std::sqrt(1.0 - ab));
        for (int64_t j = 0; j < row; ++j) out[n * row + j] = a * x0[n * row + j] + b * eps[n * row + j];
    }
    return out;
}

/// Mean squared noise-prediction error at a fixed timestep, differentiable
/// w.r.t. the model parameters through the given tape.
template <typename T, class M>
Tensor<T> timestep_loss(Tape<T>& tape, M& model, const Tensor<T>& x0, int64_t t,
                        const Tensor<T>& eps, const NoiseSchedule& s) {
    Tensor<T> xt = q_sample(x0, t, eps, s);
    std::vector<int64_t> ts(static_cast<size_t>(x0.dim(0)), t);
    Tensor<T> pred = model.forward(tape, xt, ts);
    if (!same_shape(pred, eps)) throw std::invalid_argument("timestep_loss: model output shape mismatch");
    Tensor<T> loss = tape.mse_loss(pred, eps);
    if (!all_finite(loss)) throw std::runtime_error("timestep_loss: non-finite loss");
    return loss;
}

/// One ancestral reverse step. The caller passes z = 0 for t = 1.
template <typename T, class M>
Tensor<T> ddpm_step(const Tensor<T>& x_t, int64_t t, M& model, const Tensor<T>& z,
                    const NoiseSchedule& s) {
    if (!same_shape(x_t, z)) throw std::invalid_argument("ddpm_step: x/z shape mismatch");
    Tape<T> tape(false);
    std::vector<int64_t> ts(static_cast<size_t>(x_t.dim(0)), t);
    Tensor<T> eps = model.forward(tape, x_t, ts);
    double inv_sqrt_alpha = 1.0 / std::sqrt(s.alpha(t));
    double coef = s.beta(t) / std::sqrt(1.0 - s.alpha_bar(t));
    double sg = s.sigma(t);
    Tensor<T> out(x_t.shape());
    for (int64_t i = 0; i < out.numel(); ++i)
        out[i] = static_cast<T>(inv_sqrt_alpha * (x_t[i] - coef * eps[i]) + sg * z[i]);
    return out;
}

enum class SamplerKind { ddim, ddpm };

template <typename T>
struct SampleTrace {
    uint64_t seed = 0;
    SamplerKind kind = SamplerKind::ddim;
    Tensor<T> x_T;
    Tensor<T> x0;
    std::vector<int64_t> step_plan;       // timesteps at which the model was evaluated
    std::vector<Tensor<T>> states;        // per-step x_t, ordered t = T .. 0; empty unless requested
    int64_t model_evals = 0;
};

/// Evenly strided DDIM timestep subsequence: floor(T k / n) for k = n..1, then 0.
inline std::vector<int64_t> ddim_step_plan(int64_t T, int64_t num_steps) {
    if (num_steps < 1 || num_steps > T) throw std::invalid_argument("ddim: num_steps must be in [1, T]");
    std::vector<int64_t> taus;
    taus.reserve(static_cast<size_t>(num_steps) + 1);
    for (int64_t k = num_steps; k >= 1; --k) taus.push_back(T * k / num_steps);
    taus.push_back(0);
    return taus;
}

/// Deterministic DDIM (eta = 0): x_{t'} = sqrt(abar_{t'}) x0_hat + sqrt(1-abar_{t'}) eps,
/// x0_hat = (x_t - sqrt(1-abar_t) eps) / sqrt(abar_t); abar at t' = 0 is 1.
template <typename T, class M>
SampleTrace<T> ddim_sample(M& model, const Tensor<T>& x_T, const NoiseSchedule& s,
                           int64_t num_steps, bool keep_states = false) {
    std::vector<int64_t> taus = ddim_step_plan(s.T, num_steps);
    SampleTrace<T> trace;
    trace.kind = SamplerKind::ddim;
    trace.x_T = x_T.deep_copy();
    trace.step_plan.assign(taus.begin(), taus.end() - 1);
    Tensor<T> x = x_T.deep_copy();
    if (keep_states) trace.states.push_back(x.deep_copy());
    for (size_t i = 0; i + 1 < taus.size(); ++i) {
        int64_t t = taus[i], tn = taus[i + 1];
        Tape<T> tape(false);
        std::vector<int64_t> ts(static_cast<size_t>(x.dim(0)), t);
        Tensor<T> eps = model.forward(tape, x, ts);
        ++trace.model_evals;
        double ab = s.alpha_bar(t);
        double abn = (tn == 0) ? 1.0 : s.alpha_bar(tn);
        double c0 = std::sqrt(abn / ab);
        double c1 = std::sqrt(1.0 - abn) - std::sqrt(abn * (1.0 - ab) / ab);
        Tensor<T> nx(x.shape());
        for (int64_t j = 0; j < x.numel(); ++j)
            nx[j] = static_cast<T>(c0 * x[j] + c1 * eps[j]);
        x = nx;
        if (keep_states) trace.states.push_back(x.deep_copy());
    }
    trace.x0 = x;
    return trace;
}

/// Ancestral DDPM sampling over all T steps. The z sequence is drawn from rng
/// in a fixed order independent of the model, so two models sampled with
/// identically seeded rngs share the same noise path. z = 0 at t = 1.
template <typename T, class M>
SampleTrace<T> ddpm_sample(M& model, const Tensor<T>& x_T, const NoiseSchedule& s, Rng& rng,
                           bool keep_states = false) {
    SampleTrace<T> trace;
    trace.kind = SamplerKind::ddpm;
    trace.x_T = x_T.deep_copy();
    Tensor<T> x = x_T.deep_copy();
    if (keep_states) trace.states.push_back(x.deep_copy());
    for (int64_t t = s.T; t >= 1; --t) {
        trace.step_plan.push_back(t);
        Tensor<T> z = (t > 1) ? normal_like<T>(x.shape(), rng) : Tensor<T>(x.shape());
        x = ddpm_step(x, t, model, z, s);
        ++trace.model_evals;
        if (keep_states) trace.states.push_back(x.deep_copy());
    }
    trace.x0 = x;
    return trace;
}

/// Mean loss per timestep over fixed seeded draws; L[t-1] holds step t.
struct LossProfile {
    std::vector<double> L;
    int64_t n_per_step = 0;

    int64_t T() const { return static_cast<int64_t>(L.size()); }
    double at(int64_t t) const {
        if (t < 1 || t > T()) throw std::out_of_range("LossProfile: t out of range");
        return L[static_cast<size_t>(t - 1)];
    }
    double l_max() const {
        double m = 0;
        for (double v : L) m = std::max(m, v);
        return m;
    }
};

template <typename T, class M>
LossProfile estimate_loss_profile(M& model, const Tensor<T>& dataset, const NoiseSchedule& s,
                                  int64_t n_per_step, uint64_t seed) {
    if (dataset.dim(0) < 1) throw std::invalid_argument("estimate_loss_profile: empty dataset");
    if (n_per_step < 1) throw std::invalid_argument("estimate_loss_profile: n_per_step must be >= 1");
    LossProfile p;
    p.n_per_step = n_per_step;
    p.L.resize(static_cast<size_t>(s.T));
    for (int64_t t = 1; t <= s.T; ++t) {
        Rng rng(seed_stream(seed, static_cast<uint64_t>(t)));
        std::vector<int64_t> idx(static_cast<size_t>(n_per_step));
        for (auto& i : idx) i = rng.uniform_int(0, dataset.dim(0) - 1);
        Tensor<T> x0 = take_rows(dataset, idx);
        Tensor<T> eps = normal_like<T>(x0.shape(), rng);
        Tape<T> tape(false);
        p.L[static_cast<size_t>(t - 1)] = static_cast<double>(timestep_loss(tape, model, x0, t, eps, s).item());
    }
    return p;
}

/// Runs two full reverse processes from the same x_T and the same z sequence.
/// The perturbed run adds delta to the model output only at step t_inject.
/// With z_seq == nullptr every z is zero (the deterministic oracle path).
template <typename T, class M>
std::pair<SampleTrace<T>, SampleTrace<T>> inject_perturbation(
    M& model, const Tensor<T>& x_T, const NoiseSchedule& s, int64_t t_inject,
    const Tensor<T>& delta, const std::vector<Tensor<T>>* z_seq = nullptr) {
    s.check(t_inject);
    if (!same_shape(x_T, delta)) throw std::invalid_argument("inject_perturbation: delta shape mismatch");
    if (z_seq && static_cast<int64_t>(z_seq->size()) != s.T)
        throw std::invalid_argument("inject_perturbation: z sequence must have T entries");

    auto run = [&](bool perturb) {
        SampleTrace<T> trace;
        trace.kind = SamplerKind::ddpm;
        trace.x_T = x_T.deep_copy();
        Tensor<T> x = x_T.deep_copy();
        for (int64_t t = s.T; t >= 1; --t) {
            trace.step_plan.push_back(t);
            Tape<T> tape(false);
            std::vector<int64_t> ts(static_cast<size_t>(x.dim(0)), t);
            Tensor<T> eps = model.forward(tape, x, ts);
            ++trace.model_evals;
            if (perturb && t == t_inject)
                for (int64_t i = 0; i < eps.numel(); ++i) eps[i] += delta[i];
            double inv_sqrt_alpha = 1.0 / std::sqrt(s.alpha(t));
            double coef = s.beta(t) / std::sqrt(1.0 - s.alpha_bar(t));
            double sg = s.sigma(t);
            Tensor<T> nx(x.shape());
            for (int64_t i = 0; i < x.numel(); ++i) {
                double z = (t > 1 && z_seq) ? static_cast<double>((*z_seq)[s.T - t][i]) : 0.0;
                nx[i] = static_cast<T>(inv_sqrt_alpha * (x[i] - coef * eps[i]) + sg * z);
            }
            x = nx;
        }
        trace.x0 = x;
        return trace;
    };
    return {run(false), run(true)};
}

}  // namespace diffprune
