// Copyright (c) 2026 the diffprune authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstring>
#include <functional>
#include <stdexcept>
#include <vector>

#include "diffprune/tensor.hpp"
#include "diffprune/thread_pool.hpp"

namespace diffprune {

namespace kern {

// c += a * b, row-major; a: m x k, b: k x n.
template <typename T>
void mm_nn(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n) {
    for (int64_t i = 0; i < m; ++i) {
        T* crow = c + i * n;
        const T* arow = a + i * k;
        for (int64_t p = 0; p < k; ++p) {
            T av = arow[p];
            const T* brow = b + p * n;
            for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// c += a * b^T; a: m x k, b: n x k. Four-way split accumulators give the
// compiler independent chains to vectorize without reassociating a single
// serial reduction.
template <typename T>
void mm_nt(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n) {
    for (int64_t i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        T* crow = c + i * n;
        for (int64_t j = 0; j < n; ++j) {
            const T* brow = b + j * k;
            T a0 = 0, a1 = 0, a2 = 0, a3 = 0;
            int64_t p = 0;
            for (; p + 4 <= k; p += 4) {
                a0 += arow[p] * brow[p];
                a1 += arow[p + 1] * brow[p + 1];
                a2 += arow[p + 2] * brow[p + 2];
                a3 += arow[p + 3] * brow[p + 3];
            }
            T acc = (a0 + a1) + (a2 + a3);
            for (; p < k; ++p) acc += arow[p] * brow[p];
            crow[j] += acc;
        }
    }
}

// dst[c x r] = src[r x c], blocked for cache locality.
template <typename T>
void transpose(const T* src, T* dst, int64_t rows, int64_t cols) {
    constexpr int64_t B = 32;
    for (int64_t r0 = 0; r0 < rows; r0 += B)
        for (int64_t c0 = 0; c0 < cols; c0 += B) {
            int64_t r1 = std::min(rows, r0 + B), c1 = std::min(cols, c0 + B);
            for (int64_t r = r0; r < r1; ++r)
                for (int64_t c = c0; c < c1; ++c) dst[c * rows + r] = src[r * cols + c];
        }
}

// c += a^T * b; a: k x m, b: k x n.
template <typename T>
void mm_tn(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n) {
    for (int64_t p = 0; p < k; ++p) {
        const T* arow = a + p * m;
        const T* brow = b + p * n;
        for (int64_t i = 0; i < m; ++i) {
            T av = arow[i];
            T* crow = c + i * n;
            for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

template <typename T>
T sigmoid(T x) {
    return T(1) / (T(1) + std::exp(-x));
}

}  // namespace kern

/// Records differentiable operations in execution order; backward() replays
/// the record once in reverse. A tape and its tensors belong to one thread.
/// Intra-op parallelism writes disjoint ranges and reduces in a fixed order,
/// so results are independent of the worker count.
template <typename T>
class Tape {
public:
    explicit Tape(bool recording = true) : recording_(recording) {}

    bool recording() const { return recording_; }
    size_t size() const { return nodes_.size(); }

    // ---- elementwise ----

    Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
        require(same_shape(a, b), "add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
        Tensor<T> out(a.shape());
        parallel_for(out.numel(), [&](int64_t i0, int64_t i1) {
            for (int64_t i = i0; i < i1; ++i) out[i] = a[i] + b[i];
        });
        if (track(out, {&a, &b})) {
            push([a, b, out]() mutable {
                if (!out.has_grad()) return;
                auto g = out.grad_view();
                std::span<T> ga = a.requires_grad() ? a.grad() : std::span<T>{};
                std::span<T> gb = b.requires_grad() ? b.grad() : std::span<T>{};
                parallel_for(out.numel(), [&](int64_t i0, int64_t i1) {
                    if (!ga.empty())
                        for (int64_t i = i0; i < i1; ++i) ga[i] += g[i];
                    if (!gb.empty())
                        for (int64_t i = i0; i < i1; ++i) gb[i] += g[i];
                });
            });
        }
        return out;
    }

    Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
        require(same_shape(a, b), "mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
        Tensor<T> out(a.shape());
        for (int64_t i = 0; i < out.numel(); ++i) out[i] = a[i] * b[i];
        if (track(out, {&a, &b})) {
            push([a, b, out]() mutable {
                if (!out.has_grad()) return;
                auto g = out.grad_view();
                if (a.requires_grad()) {
                    auto ga = a.grad();
                    for (int64_t i = 0; i < out.numel(); ++i) ga[i] += g[i] * b[i];
                }
                if (b.requires_grad()) {
                    auto gb = b.grad();
                    for (int64_t i = 0; i < out.numel(); ++i) gb[i] += g[i] * a[i];
                }
            });
        }
        return out;
    }

    Tensor<T> scale(const Tensor<T>& a, T c) {
        Tensor<T> out(a.shape());
        for (int64_t i = 0; i < out.numel(); ++i) out[i] = c * a[i];
        if (track(out, {&a})) {
            push([a, out, c]() mutable {
                if (!out.has_grad()) return;
                auto g = out.grad_view();
                auto ga = a.grad();
                for (int64_t i = 0; i < out.numel(); ++i) ga[i] += c * g[i];
            });
        }
        return out;
    }

    Tensor<T> silu(const Tensor<T>& x) {
        Tensor<T> out(x.shape());
        bool needs_grad = recording_ && x.requires_grad();
        auto sig = std::make_shared<std::vector<T>>();
        if (needs_grad) sig->resize(static_cast<size_t>(x.numel()));
        parallel_for(x.numel(), [&](int64_t i0, int64_t i1) {
            for (int64_t i = i0; i < i1; ++i) {
                T s = kern::sigmoid(x[i]);
                if (needs_grad) (*sig)[static_cast<size_t>(i)] = s;
                out[i] = x[i] * s;
            }
        });
        if (track(out, {&x})) {
            push([x, out, sig]() mutable {
                if (!out.has_grad()) return;
                auto g = out.grad_view();
                auto gx = x.grad();  // materialized before the parallel region
                parallel_for(x.numel(), [&](int64_t i0, int64_t i1) {
                    for (int64_t i = i0; i < i1; ++i) {
                        T s = (*sig)[static_cast<size_t>(i)];
                        gx[i] += g[i] * s * (T(1) + x[i] * (T(1) - s));
                    }
                });
            });
        }
        return out;
    }

    // ---- reductions ----

    Tensor<T> sum(const Tensor<T>& x) {
        T acc = 0;
        for (int64_t i = 0; i < x.numel(); ++i) acc += x[i];
        Tensor<T> out = Tensor<T>::scalar(acc);
        if (track(out, {&x})) {
            push([x, out]() mutable {
                if (!out.has_grad()) return;
                T g = out.grad_view()[0];
                auto gx = x.grad();
                for (int64_t i = 0; i < x.numel(); ++i) gx[i] += g;
            });
        }
        return out;
    }

    Tensor<T> mean(const Tensor<T>& x) {
        T acc = 0;
        for (int64_t i = 0; i < x.numel(); ++i) acc += x[i];
        T inv = T(1) / static_cast<T>(x.numel());
        Tensor<T> out = Tensor<T>::scalar(acc * inv);
        if (track(out, {&x})) {
            push([x, out, inv]() mutable {
                if (!out.has_grad()) return;
                T g = out.grad_view()[0] * inv;
                auto gx = x.grad();
                for (int64_t i = 0; i < x.numel(); ++i) gx[i] += g;
            });
        }
        return out;
    }

    Tensor<T> mse_loss(const Tensor<T>& pred, const Tensor<T>& target) {
        require(same_shape(pred, target),
                "mse_loss: shape mismatch " + shape_str(pred.shape()) + " vs " + shape_str(target.shape()));
        T acc = 0;
        for (int64_t i = 0; i < pred.numel(); ++i) {
            T d = pred[i] - target[i];
            acc += d * d;
        }
        T inv = T(1) / static_cast<T>(pred.numel());
        Tensor<T> out = Tensor<T>::scalar(acc * inv);
        if (track(out, {&pred, &target})) {
            push([pred, target, out, inv]() mutable {
                if (!out.has_grad()) return;
                T g = out.grad_view()[0] * T(2) * inv;
                if (pred.requires_grad()) {
                    auto gp = pred.grad();
                    for (int64_t i = 0; i < pred.numel(); ++i) gp[i] += g * (pred[i] - target[i]);
                }
                if (target.requires_grad()) {
                    auto gt = target.grad();
                    for (int64_t i = 0; i < pred.numel(); ++i) gt[i] -= g * (pred[i] - target[i]);
                }
            });
        }
        return out;
    }

    // ---- linear algebra ----

    Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
        require(a.ndim() == 2 && b.ndim() == 2, "matmul: operands must be 2-D");
        require(a.dim(1) == b.dim(0), "matmul: inner dims differ, " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
        int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
        Tensor<T> out({m, n});
        kern::mm_nn(a.val().data(), b.val().data(), out.val().data(), m, k, n);
        if (track(out, {&a, &b})) {
            push([a, b, out, m, k, n]() mutable {
                if (!out.has_grad()) return;
                const T* g = out.grad_view().data();
                if (a.requires_grad()) kern::mm_nt(g, b.val().data(), a.grad().data(), m, n, k);
                if (b.requires_grad()) kern::mm_tn(a.val().data(), g, b.grad().data(), n, m, k);
            });
        }
        return out;
    }

    /// y = x . w^T + bias; x: [N, in], w: [out, in], bias: [out].
    Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
        require(x.ndim() == 2 && w.ndim() == 2 && bias.ndim() == 1, "linear: bad ranks");
        require(x.dim(1) == w.dim(1), "linear: in-dim mismatch " + shape_str(x.shape()) + " vs " + shape_str(w.shape()));
        require(bias.dim(0) == w.dim(0), "linear: bias dim mismatch");
        int64_t n = x.dim(0), in = x.dim(1), out_dim = w.dim(0);
        Tensor<T> out({n, out_dim});
        kern::mm_nt(x.val().data(), w.val().data(), out.val().data(), n, in, out_dim);
        for (int64_t i = 0; i < n; ++i)
            for (int64_t j = 0; j < out_dim; ++j) out[i * out_dim + j] += bias[j];
        if (track(out, {&x, &w, &bias})) {
            push([x, w, bias, out, n, in, out_dim]() mutable {
                if (!out.has_grad()) return;
                const T* g = out.grad_view().data();
                if (x.requires_grad()) kern::mm_nn(g, w.val().data(), x.grad().data(), n, out_dim, in);
                if (w.requires_grad()) kern::mm_tn(g, x.val().data(), w.grad().data(), out_dim, n, in);
                if (bias.requires_grad()) {
                    auto gb = bias.grad();
                    for (int64_t i = 0; i < n; ++i)
                        for (int64_t j = 0; j < out_dim; ++j) gb[j] += g[i * out_dim + j];
                }
            });
        }
        return out;
    }

    // ---- convolution ----

    /// Cross-correlation (no kernel flip). x: [N,Cin,H,W], w: [Cout,Cin,kh,kw],
    /// bias: [Cout]. Output dims must divide exactly.
    Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                     int64_t stride, int64_t pad) {
        require(x.ndim() == 4 && w.ndim() == 4 && bias.ndim() == 1, "conv2d: bad ranks");
        require(x.dim(1) == w.dim(1), "conv2d: channel mismatch " + shape_str(x.shape()) + " vs " + shape_str(w.shape()));
        require(bias.dim(0) == w.dim(0), "conv2d: bias dim mismatch");
        require(stride >= 1 && pad >= 0, "conv2d: bad stride/pad");
        int64_t kh = w.dim(2), kw = w.dim(3);
        require(kh >= 1 && kw >= 1, "conv2d: empty kernel");
        require(pad == 0 || (kh % 2 == 1 && kw % 2 == 1), "conv2d: padded convolutions require odd kernels");
        int64_t N = x.dim(0), cin = x.dim(1), H = x.dim(2), W = x.dim(3), cout = w.dim(0);
        require((H + 2 * pad - kh) % stride == 0 && (W + 2 * pad - kw) % stride == 0,
                "conv2d: non-integer output dims");
        int64_t ho = (H + 2 * pad - kh) / stride + 1;
        int64_t wo = (W + 2 * pad - kw) / stride + 1;
        require(ho >= 1 && wo >= 1, "conv2d: empty output");

        int64_t K = cin * kh * kw, P = ho * wo;
        Tensor<T> out({N, cout, ho, wo});
        bool needs_cols_later = recording_ && w.requires_grad();
        // im2col writes every entry (pads included), so the buffer can stay
        // uninitialized.
        std::shared_ptr<T[]> cols_store;
        if (needs_cols_later) cols_store.reset(new T[static_cast<size_t>(N * K * P)]);

        const T* xv = x.val().data();
        const T* wv = w.val().data();
        const T* bv = bias.val().data();
        T* ov = out.val().data();
        parallel_for(N, [&](int64_t n0, int64_t n1) {
            std::vector<T> cols_local;
            if (!needs_cols_later) cols_local.resize(static_cast<size_t>(K * P));
            for (int64_t n = n0; n < n1; ++n) {
                T* cols = needs_cols_later ? cols_store.get() + n * K * P : cols_local.data();
                im2col(xv + n * cin * H * W, cols, cin, H, W, kh, kw, stride, pad, ho, wo);
                T* on = ov + n * cout * P;
                for (int64_t c = 0; c < cout; ++c) {
                    T b = bv[c];
                    T* row = on + c * P;
                    for (int64_t p = 0; p < P; ++p) row[p] = b;
                }
                kern::mm_nn(wv, cols, on, cout, K, P);
            }
        });

        if (track(out, {&x, &w, &bias})) {
            push([x, w, bias, out, cols_store, stride, pad, N, cin, cout, H, W, kh, kw, ho, wo, K, P]() mutable {
                if (!out.has_grad()) return;
                const T* g = out.grad_view().data();
                if (bias.requires_grad()) {
                    auto gb = bias.grad();
                    parallel_for(cout, [&](int64_t c0, int64_t c1) {
                        for (int64_t c = c0; c < c1; ++c) {
                            T acc = 0;
                            for (int64_t n = 0; n < N; ++n) {
                                const T* row = g + (n * cout + c) * P;
                                for (int64_t p = 0; p < P; ++p) acc += row[p];
                            }
                            gb[c] += acc;
                        }
                    });
                }
                if (w.requires_grad()) {
                    // Per-sample contributions land in disjoint slabs, then each
                    // weight element reduces over samples in ascending order, so
                    // grads are exact under any thread count. Transposing the
                    // column buffer turns dW into the fast nn-kernel product.
                    std::vector<T> dw_per(static_cast<size_t>(N) * cout * K, T(0));
                    parallel_for(N, [&](int64_t n0, int64_t n1) {
                        std::vector<T> colsT(static_cast<size_t>(K * P));
                        for (int64_t n = n0; n < n1; ++n) {
                            kern::transpose(cols_store.get() + n * K * P, colsT.data(), K, P);
                            kern::mm_nn(g + n * cout * P, colsT.data(), dw_per.data() + n * cout * K,
                                        cout, P, K);
                        }
                    });
                    auto gw = w.grad();
                    parallel_for(cout * K, [&](int64_t j0, int64_t j1) {
                        for (int64_t n = 0; n < N; ++n) {
                            const T* src = dw_per.data() + n * cout * K;
                            for (int64_t j = j0; j < j1; ++j) gw[j] += src[j];
                        }
                    });
                }
                if (x.requires_grad()) {
                    auto gx = x.grad();
                    const T* wv = w.val().data();
                    parallel_for(N, [&](int64_t n0, int64_t n1) {
                        std::vector<T> dcols(static_cast<size_t>(K * P));
                        for (int64_t n = n0; n < n1; ++n) {
                            std::fill(dcols.begin(), dcols.end(), T(0));
                            kern::mm_tn(wv, g + n * cout * P, dcols.data(), K, cout, P);
                            col2im_add(dcols.data(), gx.data() + n * cin * H * W, cin, H, W, kh, kw,
                                       stride, pad, ho, wo);
                        }
                    });
                }
            });
        }
        return out;
    }

    Tensor<T> upsample_nearest2x(const Tensor<T>& x) {
        require(x.ndim() == 4, "upsample_nearest2x: expected 4-D input");
        int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
        Tensor<T> out({N, C, 2 * H, 2 * W});
        const T* xv = x.val().data();
        T* ov = out.val().data();
        parallel_for(N * C, [&](int64_t nc0, int64_t nc1) {
            for (int64_t nc = nc0; nc < nc1; ++nc) {
                const T* src = xv + nc * H * W;
                T* dst = ov + nc * 4 * H * W;
                for (int64_t h = 0; h < H; ++h)
                    for (int64_t w = 0; w < W; ++w) {
                        T v = src[h * W + w];
                        int64_t base = (2 * h) * (2 * W) + 2 * w;
                        dst[base] = v;
                        dst[base + 1] = v;
                        dst[base + 2 * W] = v;
                        dst[base + 2 * W + 1] = v;
                    }
            }
        });
        if (track(out, {&x})) {
            push([x, out, N, C, H, W]() mutable {
                if (!out.has_grad()) return;
                const T* g = out.grad_view().data();
                auto gx = x.grad();
                parallel_for(N * C, [&](int64_t nc0, int64_t nc1) {
                    for (int64_t nc = nc0; nc < nc1; ++nc) {
                        const T* src = g + nc * 4 * H * W;
                        T* dst = gx.data() + nc * H * W;
                        for (int64_t h = 0; h < H; ++h)
                            for (int64_t w = 0; w < W; ++w) {
                                int64_t base = (2 * h) * (2 * W) + 2 * w;
                                dst[h * W + w] +=
                                    src[base] + src[base + 1] + src[base + 2 * W] + src[base + 2 * W + 1];
                            }
                    }
                });
            });
        }
        return out;
    }

    // ---- normalization ----

    Tensor<T> group_norm(const Tensor<T>& x, int64_t groups, const Tensor<T>& gamma,
                         const Tensor<T>& beta, T eps = T(1e-5)) {
        require(x.ndim() == 4, "group_norm: expected 4-D input");
        int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
        require(groups >= 1 && C % groups == 0, "group_norm: groups must divide channels");
        require(gamma.ndim() == 1 && gamma.dim(0) == C && beta.ndim() == 1 && beta.dim(0) == C,
                "group_norm: affine dims must equal channels");
        int64_t cpg = C / groups, M = cpg * H * W;
        Tensor<T> out(x.shape());
        auto stats = std::make_shared<std::vector<T>>(static_cast<size_t>(2 * N * groups));  // mean, invstd
        const T* xv = x.val().data();
        T* ov = out.val().data();
        const T* gm = gamma.val().data();
        const T* bt = beta.val().data();
        parallel_for(N, [&](int64_t n0, int64_t n1) {
            for (int64_t n = n0; n < n1; ++n)
                for (int64_t g = 0; g < groups; ++g) {
                    const T* xs = xv + (n * C + g * cpg) * H * W;
                    T m = 0;
                    for (int64_t i = 0; i < M; ++i) m += xs[i];
                    m /= static_cast<T>(M);
                    T v = 0;
                    for (int64_t i = 0; i < M; ++i) {
                        T d = xs[i] - m;
                        v += d * d;
                    }
                    v /= static_cast<T>(M);
                    T inv = T(1) / std::sqrt(v + eps);
                    (*stats)[(n * groups + g) * 2] = m;
                    (*stats)[(n * groups + g) * 2 + 1] = inv;
                    T* os = ov + (n * C + g * cpg) * H * W;
                    for (int64_t c = 0; c < cpg; ++c) {
                        T ga = gm[g * cpg + c], be = bt[g * cpg + c];
                        const T* xc = xs + c * H * W;
                        T* oc = os + c * H * W;
                        for (int64_t i = 0; i < H * W; ++i) oc[i] = ga * ((xc[i] - m) * inv) + be;
                    }
                }
        });
        if (track(out, {&x, &gamma, &beta})) {
            push([x, gamma, beta, out, stats, groups, N, C, H, W, cpg, M]() mutable {
                if (!out.has_grad()) return;
                const T* g = out.grad_view().data();
                const T* xv = x.val().data();
                const T* gm = gamma.val().data();
                if (gamma.requires_grad() || beta.requires_grad()) {
                    std::span<T> gga = gamma.requires_grad() ? gamma.grad() : std::span<T>{};
                    std::span<T> gbe = beta.requires_grad() ? beta.grad() : std::span<T>{};
                    parallel_for(C, [&](int64_t c0, int64_t c1) {
                        for (int64_t c = c0; c < c1; ++c) {
                            T sg = 0, sb = 0;
                            for (int64_t n = 0; n < N; ++n) {
                                T m = (*stats)[(n * groups + c / cpg) * 2];
                                T inv = (*stats)[(n * groups + c / cpg) * 2 + 1];
                                const T* gs = g + (n * C + c) * H * W;
                                const T* xs = xv + (n * C + c) * H * W;
                                for (int64_t i = 0; i < H * W; ++i) {
                                    sg += gs[i] * (xs[i] - m) * inv;
                                    sb += gs[i];
                                }
                            }
                            if (!gga.empty()) gga[c] += sg;
                            if (!gbe.empty()) gbe[c] += sb;
                        }
                    });
                }
                if (x.requires_grad()) {
                    auto gx = x.grad();
                    parallel_for(N, [&](int64_t n0, int64_t n1) {
                        for (int64_t n = n0; n < n1; ++n)
                            for (int64_t gi = 0; gi < groups; ++gi) {
                                T m = (*stats)[(n * groups + gi) * 2];
                                T inv = (*stats)[(n * groups + gi) * 2 + 1];
                                const T* xs = xv + (n * C + gi * cpg) * H * W;
                                const T* gs = g + (n * C + gi * cpg) * H * W;
                                T* gxs = gx.data() + (n * C + gi * cpg) * H * W;
                                T sum_d = 0, sum_dx = 0;
                                for (int64_t c = 0; c < cpg; ++c) {
                                    T ga = gm[gi * cpg + c];
                                    for (int64_t i = 0; i < H * W; ++i) {
                                        T dxh = gs[c * H * W + i] * ga;
                                        sum_d += dxh;
                                        sum_dx += dxh * (xs[c * H * W + i] - m) * inv;
                                    }
                                }
                                T im = T(1) / static_cast<T>(M);
                                for (int64_t c = 0; c < cpg; ++c) {
                                    T ga = gm[gi * cpg + c];
                                    for (int64_t i = 0; i < H * W; ++i) {
                                        T xh = (xs[c * H * W + i] - m) * inv;
                                        T dxh = gs[c * H * W + i] * ga;
                                        gxs[c * H * W + i] += inv * (dxh - im * sum_d - xh * im * sum_dx);
                                    }
                                }
                            }
                    });
                }
            });
        }
        return out;
    }

    // ---- shape plumbing ----

    /// Concatenate along the channel axis: [N,Ca,H,W] + [N,Cb,H,W].
    Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
        require(a.ndim() == 4 && b.ndim() == 4, "concat_channels: expected 4-D inputs");
        require(a.dim(0) == b.dim(0) && a.dim(2) == b.dim(2) && a.dim(3) == b.dim(3),
                "concat_channels: non-channel dims differ, " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
        int64_t N = a.dim(0), ca = a.dim(1), cb = b.dim(1), H = a.dim(2), W = a.dim(3), hw = H * W;
        Tensor<T> out({N, ca + cb, H, W});
        parallel_for(N, [&](int64_t n0, int64_t n1) {
            for (int64_t n = n0; n < n1; ++n) {
                std::memcpy(out.val().data() + n * (ca + cb) * hw, a.val().data() + n * ca * hw,
                            sizeof(T) * ca * hw);
                std::memcpy(out.val().data() + (n * (ca + cb) + ca) * hw, b.val().data() + n * cb * hw,
                            sizeof(T) * cb * hw);
            }
        });
        if (track(out, {&a, &b})) {
            push([a, b, out, N, ca, cb, hw]() mutable {
                if (!out.has_grad()) return;
                const T* g = out.grad_view().data();
                std::span<T> ga = a.requires_grad() ? a.grad() : std::span<T>{};
                std::span<T> gb = b.requires_grad() ? b.grad() : std::span<T>{};
                parallel_for(N, [&](int64_t n0, int64_t n1) {
                    for (int64_t n = n0; n < n1; ++n) {
                        if (!ga.empty())
                            for (int64_t i = 0; i < ca * hw; ++i)
                                ga[n * ca * hw + i] += g[n * (ca + cb) * hw + i];
                        if (!gb.empty())
                            for (int64_t i = 0; i < cb * hw; ++i)
                                gb[n * cb * hw + i] += g[(n * (ca + cb) + ca) * hw + i];
                    }
                });
            });
        }
        return out;
    }

    /// Adds a per-sample channel vector t: [N,C] to x: [N,C,H,W].
    Tensor<T> add_channels(const Tensor<T>& x, const Tensor<T>& t) {
        require(x.ndim() == 4 && t.ndim() == 2, "add_channels: expected [N,C,H,W] + [N,C]");
        require(x.dim(0) == t.dim(0) && x.dim(1) == t.dim(1), "add_channels: N/C mismatch");
        int64_t N = x.dim(0), C = x.dim(1), hw = x.dim(2) * x.dim(3);
        Tensor<T> out(x.shape());
        parallel_for(N * C, [&](int64_t nc0, int64_t nc1) {
            for (int64_t nc = nc0; nc < nc1; ++nc) {
                T tv = t[nc];
                const T* xs = x.val().data() + nc * hw;
                T* os = out.val().data() + nc * hw;
                for (int64_t i = 0; i < hw; ++i) os[i] = xs[i] + tv;
            }
        });
        if (track(out, {&x, &t})) {
            push([x, t, out, N, C, hw]() mutable {
                if (!out.has_grad()) return;
                const T* g = out.grad_view().data();
                std::span<T> gx = x.requires_grad() ? x.grad() : std::span<T>{};
                std::span<T> gt = t.requires_grad() ? t.grad() : std::span<T>{};
                parallel_for(N * C, [&](int64_t nc0, int64_t nc1) {
                    for (int64_t nc = nc0; nc < nc1; ++nc) {
                        const T* gs = g + nc * hw;
                        if (!gx.empty()) {
                            T* dst = gx.data() + nc * hw;
                            for (int64_t i = 0; i < hw; ++i) dst[i] += gs[i];
                        }
                        if (!gt.empty()) {
                            T acc = 0;
                            for (int64_t i = 0; i < hw; ++i) acc += gs[i];
                            gt[nc] += acc;
                        }
                    }
                });
            });
        }
        return out;
    }

    // ---- backward ----

    void backward(Tensor<T> loss) {
        if (!recording_) throw std::logic_error("backward: tape is not recording");
        if (consumed_) throw std::logic_error("backward: tape already consumed");
        if (loss.numel() != 1) throw std::invalid_argument("backward: loss must be scalar");
        consumed_ = true;
        loss.grad()[0] = T(1);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
        nodes_.clear();
    }

private:
    static void require(bool ok, const std::string& msg) {
        if (!ok) throw std::invalid_argument(msg);
    }

    bool track(Tensor<T>& out, std::initializer_list<const Tensor<T>*> inputs) {
        if (!recording_) return false;
        bool any = false;
        for (const Tensor<T>* t : inputs) any = any || t->requires_grad();
        if (any) out.set_requires_grad(true);
        return any;
    }

    void push(std::function<void()> fn) { nodes_.push_back(std::move(fn)); }

    static void im2col(const T* x, T* cols, int64_t cin, int64_t H, int64_t W, int64_t kh,
                       int64_t kw, int64_t stride, int64_t pad, int64_t ho, int64_t wo) {
        int64_t P = ho * wo;
        for (int64_t c = 0; c < cin; ++c)
            for (int64_t ki = 0; ki < kh; ++ki)
                for (int64_t kj = 0; kj < kw; ++kj) {
                    T* dst = cols + ((c * kh + ki) * kw + kj) * P;
                    for (int64_t oh = 0; oh < ho; ++oh) {
                        int64_t ih = oh * stride - pad + ki;
                        if (ih < 0 || ih >= H) {
                            for (int64_t ow = 0; ow < wo; ++ow) dst[oh * wo + ow] = T(0);
                            continue;
                        }
                        for (int64_t ow = 0; ow < wo; ++ow) {
                            int64_t iw = ow * stride - pad + kj;
                            dst[oh * wo + ow] = (iw < 0 || iw >= W) ? T(0) : x[(c * H + ih) * W + iw];
                        }
                    }
                }
    }

    static void col2im_add(const T* cols, T* x, int64_t cin, int64_t H, int64_t W, int64_t kh,
                           int64_t kw, int64_t stride, int64_t pad, int64_t ho, int64_t wo) {
        int64_t P = ho * wo;
        for (int64_t c = 0; c < cin; ++c)
            for (int64_t ki = 0; ki < kh; ++ki)
                for (int64_t kj = 0; kj < kw; ++kj) {
                    const T* src = cols + ((c * kh + ki) * kw + kj) * P;
                    for (int64_t oh = 0; oh < ho; ++oh) {
                        int64_t ih = oh * stride - pad + ki;
                        if (ih < 0 || ih >= H) continue;
                        for (int64_t ow = 0; ow < wo; ++ow) {
                            int64_t iw = ow * stride - pad + kj;
                            if (iw >= 0 && iw < W) x[(c * H + ih) * W + iw] += src[oh * wo + ow];
                        }
                    }
                }
    }

    std::vector<std::function<void()>> nodes_;
    bool recording_;
    bool consumed_ = false;
};

/// Max over coordinates of |autodiff - central difference| / (|central| + 1e-8).
/// f must be a scalar-valued function of x evaluated through the given tape.
template <typename T, typename F>
double grad_check(F&& f, Tensor<T> x, T fd_eps) {
    x.set_requires_grad(true);
    x.zero_grad();
    Tape<T> tape;
    Tensor<T> loss = f(tape, x);
    if (loss.numel() != 1) throw std::invalid_argument("grad_check: f must be scalar-valued");
    tape.backward(loss);
    std::vector<T> auto_grad(x.grad().begin(), x.grad().end());

    double worst = 0;
    Tensor<T> probe = x.deep_copy();
    probe.set_requires_grad(false);
    for (int64_t i = 0; i < x.numel(); ++i) {
        T orig = probe[i];
        probe[i] = orig + fd_eps;
        Tape<T> t1(false);
        double up = static_cast<double>(f(t1, probe).item());
        probe[i] = orig - fd_eps;
        Tape<T> t2(false);
        double dn = static_cast<double>(f(t2, probe).item());
        probe[i] = orig;
        double central = (up - dn) / (2.0 * static_cast<double>(fd_eps));
        double rel = std::abs(static_cast<double>(auto_grad[i]) - central) / (std::abs(central) + 1e-8);
        worst = std::max(worst, rel);
    }
    return worst;
}

}  // namespace diffprune
