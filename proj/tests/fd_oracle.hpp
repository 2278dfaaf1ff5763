// Test-only finite-difference oracles, independent of the tape's backward path.
#pragma once

#include <cmath>
#include <vector>

#include "diffprune/autodiff.hpp"
#include "diffprune/rng.hpp"

namespace oracle {

using diffprune::Rng;
using diffprune::Shape;
using diffprune::Tape;
using diffprune::Tensor;

/// A constant held in both precisions so one generic function body can be
/// evaluated as f32 (autodiff under test) and f64 (finite-difference reference).
struct Dual {
    Tensor<float> f32;
    Tensor<double> f64;

    static Dual random(Shape shape, Rng& rng, double scale = 1.0) {
        Tensor<double> d(shape);
        for (int64_t i = 0; i < d.numel(); ++i) d[i] = scale * rng.normal();
        return of(d);
    }

    static Dual of(const Tensor<double>& d) {
        Tensor<float> f(d.shape());
        for (int64_t i = 0; i < d.numel(); ++i) f[i] = static_cast<float>(d[i]);
        return Dual{f, d};
    }

    template <typename T>
    const Tensor<T>& get() const {
        if constexpr (std::is_same_v<T, float>) return f32;
        else return f64;
    }
};

/// Max over coordinates of |f32 autodiff - f64 central difference| / (|cd| + 1e-8).
/// `fn` is a generic callable fn(Tape<T>&, Tensor<T>) -> scalar Tensor<T>.
template <typename Fn>
double f32_grad_err_vs_f64_fd(Fn&& fn, const Tensor<double>& x0, double h = 1e-5) {
    Dual x = Dual::of(x0);
    x.f32.set_requires_grad(true);
    Tape<float> tape;
    Tensor<float> loss = fn(tape, x.f32);
    tape.backward(loss);
    std::vector<float> g(x.f32.grad().begin(), x.f32.grad().end());

    Tensor<double> probe = x.f64.deep_copy();
    double worst = 0;
    for (int64_t i = 0; i < probe.numel(); ++i) {
        double orig = probe[i];
        probe[i] = orig + h;
        Tape<double> t1(false);
        double up = fn(t1, probe).item();
        probe[i] = orig - h;
        Tape<double> t2(false);
        double dn = fn(t2, probe).item();
        probe[i] = orig;
        double central = (up - dn) / (2.0 * h);
        double rel = std::abs(static_cast<double>(g[i]) - central) / (std::abs(central) + 1e-8);
        worst = std::max(worst, rel);
    }
    return worst;
}

}  // namespace oracle
