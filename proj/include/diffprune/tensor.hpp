// Copyright (c) 2026 the diffprune authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace diffprune {

using Shape = std::vector<int64_t>;

inline int64_t numel_of(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

template <typename T>
struct TensorStorage {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;  // empty until a gradient is accumulated
    bool requires_grad = false;
};

/// Dense row-major tensor. Copying a Tensor copies the handle, not the data;
/// use deep_copy() for an independent buffer. Handle constness is shallow:
/// a const Tensor still exposes mutable storage, exactly as a copied handle
/// would. Gradient buffers accumulate additively until zero_grad().
template <typename T>
class Tensor {
public:
    using scalar_type = T;

    Tensor() = default;

    explicit Tensor(Shape shape, T fill = T(0))
        : d_(std::make_shared<TensorStorage<T>>()) {
        validate_shape(shape);
        d_->shape = std::move(shape);
        d_->value.assign(static_cast<size_t>(numel_of(d_->shape)), fill);
    }

    Tensor(Shape shape, std::vector<T> values)
        : d_(std::make_shared<TensorStorage<T>>()) {
        validate_shape(shape);
        if (static_cast<int64_t>(values.size()) != numel_of(shape))
            throw std::invalid_argument("Tensor: data length " + std::to_string(values.size()) +
                                        " does not match shape " + shape_str(shape));
        d_->shape = std::move(shape);
        d_->value = std::move(values);
    }

    static Tensor scalar(T v) { return Tensor({1}, std::vector<T>{v}); }

    bool defined() const { return d_ != nullptr; }
    const Shape& shape() const { return d_->shape; }
    int64_t ndim() const { return static_cast<int64_t>(d_->shape.size()); }
    int64_t dim(int i) const { return d_->shape.at(static_cast<size_t>(i)); }
    int64_t numel() const { return static_cast<int64_t>(d_->value.size()); }

    std::span<T> val() const { return d_->value; }
    T& operator[](int64_t i) const { return d_->value[static_cast<size_t>(i)]; }

    T item() const {
        if (numel() != 1) throw std::invalid_argument("item: tensor is not scalar, shape " + shape_str(shape()));
        return d_->value[0];
    }

    bool requires_grad() const { return d_->requires_grad; }
    const Tensor& set_requires_grad(bool on = true) const {
        d_->requires_grad = on;
        return *this;
    }

    bool has_grad() const { return !d_->grad.empty(); }
    std::span<T> grad() const {
        ensure_grad();
        return d_->grad;
    }
    std::span<const T> grad_view() const {
        if (d_->grad.empty()) throw std::runtime_error("grad_view: no gradient accumulated");
        return d_->grad;
    }
    void ensure_grad() const {
        if (d_->grad.empty()) d_->grad.assign(d_->value.size(), T(0));
    }
    void zero_grad() const { d_->grad.clear(); }

    /// Independent copy of values (gradients are not copied).
    Tensor deep_copy() const {
        Tensor out(d_->shape);
        out.d_->value = d_->value;
        out.d_->requires_grad = d_->requires_grad;
        return out;
    }

    bool same_storage(const Tensor& other) const { return d_ == other.d_; }
    TensorStorage<T>* operator->() { return d_.get(); }
    const TensorStorage<T>* operator->() const { return d_.get(); }

private:
    static void validate_shape(const Shape& shape) {
        if (shape.empty()) throw std::invalid_argument("Tensor: empty shape");
        for (int64_t d : shape)
            if (d <= 0) throw std::invalid_argument("Tensor: non-positive dim in " + shape_str(shape));
    }

    std::shared_ptr<TensorStorage<T>> d_;
};

template <typename T>
bool all_finite(const Tensor<T>& t) {
    for (T v : t.val())
        if (!std::isfinite(v)) return false;
    return true;
}

template <typename T>
bool same_shape(const Tensor<T>& a, const Tensor<T>& b) {
    return a.shape() == b.shape();
}

template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
    if (!same_shape(a, b)) throw std::invalid_argument("max_abs_diff: shape mismatch");
    T m = 0;
    for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace diffprune
