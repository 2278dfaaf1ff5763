// Copyright (c) 2026 the diffprune authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "diffprune/layers.hpp"

namespace diffprune {

// ---------------------------------------------------------------------------
// Prunable-structure metadata
// ---------------------------------------------------------------------------

enum class ParamKind { weight_out, weight_in, bias, norm_gamma, norm_beta };

inline const char* param_kind_name(ParamKind k) {
    switch (k) {
        case ParamKind::weight_out: return "weight_out";
        case ParamKind::weight_in: return "weight_in";
        case ParamKind::bias: return "bias";
        case ParamKind::norm_gamma: return "norm_gamma";
        case ParamKind::norm_beta: return "norm_beta";
    }
    return "?";
}

/// One coupling of a channel family to a parameter tensor: family channel j
/// occupies index offset + j along `axis` of `param`.
struct AxisRef {
    std::string param;
    int axis = 0;
    int64_t offset = 0;
    ParamKind kind = ParamKind::weight_out;
};

/// A prunable channel space (e.g. one hidden layer's units). `unit` is the
/// pruning granularity in channels; group-normalized families prune whole
/// norm groups so that slicing preserves per-group statistics.
struct FamilySpec {
    std::string name;
    int64_t size = 0;
    int64_t unit = 1;
    int64_t min_keep = 1;
    std::vector<AxisRef> refs;
};

struct ParamInfo {
    std::string name;
    Shape shape;
};

struct PrunableSpec {
    std::vector<FamilySpec> families;
    std::vector<ParamInfo> inventory;  // every trainable parameter, exactly once

    const FamilySpec& family(const std::string& name) const {
        for (const auto& f : families)
            if (f.name == name) return f;
        throw std::invalid_argument("PrunableSpec: unknown family " + name);
    }
};

// ---------------------------------------------------------------------------
// Generic helpers over any denoiser model
// ---------------------------------------------------------------------------

template <class M>
int64_t param_count(const M& model) {
    int64_t n = 0;
    for (const auto& p : model.named_params()) n += p.tensor.numel();
    return n;
}

template <class M>
void set_requires_grad(M& model, bool on) {
    for (auto& p : model.named_params()) p.tensor.set_requires_grad(on);
}

template <class M>
void zero_grads(M& model) {
    for (auto& p : model.named_params()) p.tensor.zero_grad();
}

template <class M>
auto find_param(const M& model, const std::string& name) {
    for (const auto& p : model.named_params())
        if (p.name == name) return p.tensor;
    throw std::invalid_argument("find_param: no parameter named " + name);
}

// ---------------------------------------------------------------------------
// MLP denoiser for 2-D point data
// ---------------------------------------------------------------------------

/// Noise predictor for [N,2] points: a stack of hidden layers with the time
/// embedding injected additively into each pre-activation, zero-initialized
/// output layer. time_dim = 0 builds an unconditioned plain MLP.
template <typename T>
struct MlpDenoiser {
    using scalar_type = T;

    std::vector<int64_t> hidden;
    int64_t time_dim = 0;
    TimeEmbedding<T> temb;
    std::vector<Linear<T>> layers;
    std::vector<Linear<T>> time_proj;
    Linear<T> out;

    static MlpDenoiser create(std::vector<int64_t> hidden_widths, int64_t time_dim, Rng& rng) {
        if (hidden_widths.empty()) throw std::invalid_argument("MlpDenoiser: need at least one hidden layer");
        for (int64_t h : hidden_widths)
            if (h < 1) throw std::invalid_argument("MlpDenoiser: hidden width must be >= 1");
        MlpDenoiser m;
        m.hidden = std::move(hidden_widths);
        m.time_dim = time_dim;
        if (time_dim > 0) m.temb = TimeEmbedding<T>::create(time_dim, rng);
        int64_t prev = 2;
        for (int64_t h : m.hidden) {
            m.layers.push_back(Linear<T>::create(prev, h, rng));
            if (time_dim > 0) m.time_proj.push_back(Linear<T>::create(time_dim, h, rng));
            prev = h;
        }
        m.out = Linear<T>::create(prev, 2, rng, /*zero_init=*/true);
        return m;
    }

    /// Fresh random-init model with src's architecture.
    static MlpDenoiser create_like(const MlpDenoiser& src, Rng& rng) {
        return create(src.hidden, src.time_dim, rng);
    }

    Shape sample_shape(int64_t n) const { return {n, 2}; }

    Tensor<T> forward(Tape<T>& tape, const Tensor<T>& x, std::span<const int64_t> ts) const {
        if (x.ndim() != 2 || x.dim(1) != 2) throw std::invalid_argument("MlpDenoiser: expected input [N,2]");
        if (static_cast<int64_t>(ts.size()) != x.dim(0))
            throw std::invalid_argument("MlpDenoiser: ts length != batch size");
        Tensor<T> e;
        if (time_dim > 0) e = temb.forward(tape, ts);
        Tensor<T> h = x;
        for (size_t i = 0; i < layers.size(); ++i) {
            h = layers[i].forward(tape, h);
            if (time_dim > 0) h = tape.add(h, time_proj[i].forward(tape, e));
            h = tape.silu(h);
        }
        return out.forward(tape, h);
    }

    std::vector<NamedParam<T>> named_params() const {
        std::vector<NamedParam<T>> ps;
        for (size_t i = 0; i < layers.size(); ++i) {
            std::string base = "l" + std::to_string(i + 1);
            ps.push_back({base + ".weight", layers[i].weight});
            ps.push_back({base + ".bias", layers[i].bias});
            if (time_dim > 0) {
                ps.push_back({base + ".time.weight", time_proj[i].weight});
                ps.push_back({base + ".time.bias", time_proj[i].bias});
            }
        }
        ps.push_back({"out.weight", out.weight});
        ps.push_back({"out.bias", out.bias});
        if (time_dim > 0) {
            ps.push_back({"temb.fc1.weight", temb.fc1.weight});
            ps.push_back({"temb.fc1.bias", temb.fc1.bias});
            ps.push_back({"temb.fc2.weight", temb.fc2.weight});
            ps.push_back({"temb.fc2.bias", temb.fc2.bias});
        }
        return ps;
    }

    PrunableSpec prunable_spec() const {
        PrunableSpec spec;
        for (size_t i = 0; i < layers.size(); ++i) {
            std::string base = "l" + std::to_string(i + 1);
            FamilySpec fam;
            fam.name = "h" + std::to_string(i + 1);
            fam.size = hidden[i];
            fam.unit = 1;
            fam.min_keep = 1;
            fam.refs.push_back({base + ".weight", 0, 0, ParamKind::weight_out});
            fam.refs.push_back({base + ".bias", 0, 0, ParamKind::bias});
            if (time_dim > 0) {
                fam.refs.push_back({base + ".time.weight", 0, 0, ParamKind::weight_out});
                fam.refs.push_back({base + ".time.bias", 0, 0, ParamKind::bias});
            }
            std::string next = (i + 1 < layers.size()) ? "l" + std::to_string(i + 2) + ".weight" : "out.weight";
            fam.refs.push_back({next, 1, 0, ParamKind::weight_in});
            spec.families.push_back(std::move(fam));
        }
        for (const auto& p : named_params()) spec.inventory.push_back({p.name, p.tensor.shape()});
        return spec;
    }

    std::map<std::string, int64_t> family_sizes() const {
        std::map<std::string, int64_t> m;
        for (size_t i = 0; i < hidden.size(); ++i) m["h" + std::to_string(i + 1)] = hidden[i];
        return m;
    }

    /// Fresh model with the given family sizes; weights are re-initialized and
    /// expected to be overwritten by the structure module.
    MlpDenoiser resized(const std::map<std::string, int64_t>& sizes) const {
        std::vector<int64_t> new_hidden = hidden;
        for (size_t i = 0; i < hidden.size(); ++i) {
            auto it = sizes.find("h" + std::to_string(i + 1));
            if (it != sizes.end()) new_hidden[i] = it->second;
        }
        Rng rng(0);
        return create(new_hidden, time_dim, rng);
    }

    int64_t macs_per_sample(const Shape& input_shape) const {
        if (input_shape != Shape{2} && !(input_shape.size() == 2 && input_shape[1] == 2))
            throw std::invalid_argument("MlpDenoiser: macs input shape must be [2] or [N,2]");
        int64_t macs = 0;
        for (const auto& l : layers) macs += l.macs();
        for (const auto& l : time_proj) macs += l.macs();
        macs += out.macs();
        if (time_dim > 0) macs += temb.macs();
        return macs;
    }

    MlpDenoiser deep_clone() const {
        MlpDenoiser m;
        m.hidden = hidden;
        m.time_dim = time_dim;
        if (time_dim > 0) m.temb = temb.deep_clone();
        for (const auto& l : layers) m.layers.push_back(l.deep_clone());
        for (const auto& l : time_proj) m.time_proj.push_back(l.deep_clone());
        m.out = out.deep_clone();
        return m;
    }
};

// ---------------------------------------------------------------------------
// Miniature UNet denoiser for [N,1,16,16] images
// ---------------------------------------------------------------------------

/// Channel counts of every prunable stage plus the fixed norm-group sizes.
/// Norm units are set when the model is first built and survive slicing, so a
/// pruned model normalizes exactly the channel groups the teacher did.
struct UnetDims {
    int64_t stem = 0, enc1 = 0, down1 = 0, enc2 = 0, down2 = 0, mid = 0, dec1 = 0, dec2 = 0;
    int64_t unit_enc1 = 1, unit_enc2 = 1, unit_mid = 1, unit_dec1 = 1, unit_dec2 = 1;
    int64_t time_dim = 0;

    static UnetDims from_plan(int64_t c1, int64_t c2, int64_t time_dim) {
        auto norm_unit = [](int64_t c) { return c / std::min<int64_t>(8, c); };
        UnetDims d;
        d.stem = c1;
        d.enc1 = c1;
        d.down1 = c1;
        d.enc2 = c2;
        d.down2 = c2;
        d.mid = c2;
        d.dec1 = c2;
        d.dec2 = c1;
        d.unit_enc1 = norm_unit(c1);
        d.unit_enc2 = norm_unit(c2);
        d.unit_mid = norm_unit(c2);
        d.unit_dec1 = norm_unit(c2);
        d.unit_dec2 = norm_unit(c1);
        d.time_dim = time_dim;
        return d;
    }
};

template <typename T>
struct UnetBlock {
    Conv2dLayer<T> conv;
    GroupNormLayer<T> norm;
    Linear<T> time;

    static UnetBlock create(int64_t cin, int64_t cout, int64_t unit, int64_t time_dim, Rng& rng) {
        if (cout % unit != 0) throw std::invalid_argument("UnetBlock: channels not divisible by norm unit");
        UnetBlock b;
        b.conv = Conv2dLayer<T>::create(cin, cout, 3, 1, 1, rng);
        b.norm = GroupNormLayer<T>::create(cout, unit);
        b.time = Linear<T>::create(time_dim, cout, rng);
        return b;
    }

    Tensor<T> forward(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& temb) const {
        Tensor<T> h = norm.forward(tape, conv.forward(tape, x));
        h = tape.add_channels(h, time.forward(tape, temb));
        return tape.silu(h);
    }

    UnetBlock deep_clone() const { return UnetBlock{conv.deep_clone(), norm.deep_clone(), time.deep_clone()}; }
};

/// Two downsample stages, a bottleneck, and a symmetric upsample path with
/// skip concatenations: [N,1,16,16] -> [N,1,16,16].
template <typename T>
struct TinyUnet {
    using scalar_type = T;

    UnetDims dims;
    Conv2dLayer<T> stem;   // 1 -> stem
    UnetBlock<T> enc1;     // stem -> enc1 (skip source for dec2)
    Conv2dLayer<T> down1;  // enc1 -> down1, stride 2
    UnetBlock<T> enc2;     // down1 -> enc2 (skip source for dec1)
    Conv2dLayer<T> down2;  // enc2 -> down2, stride 2
    UnetBlock<T> mid;      // down2 -> mid
    UnetBlock<T> dec1;     // concat(up(mid), enc2) -> dec1
    UnetBlock<T> dec2;     // concat(up(dec1), enc1) -> dec2
    Conv2dLayer<T> head;   // dec2 -> 1, zero-init
    TimeEmbedding<T> temb;

    static TinyUnet create(int64_t c1, int64_t c2, int64_t time_dim, Rng& rng) {
        return create(UnetDims::from_plan(c1, c2, time_dim), rng);
    }

    static TinyUnet create(const UnetDims& d, Rng& rng) {
        TinyUnet u;
        u.dims = d;
        u.temb = TimeEmbedding<T>::create(d.time_dim, rng);
        u.stem = Conv2dLayer<T>::create(1, d.stem, 3, 1, 1, rng);
        u.enc1 = UnetBlock<T>::create(d.stem, d.enc1, d.unit_enc1, d.time_dim, rng);
        // 2x2 stride-2 unpadded convs halve even spatial dims exactly
        u.down1 = Conv2dLayer<T>::create(d.enc1, d.down1, 2, 2, 0, rng);
        u.enc2 = UnetBlock<T>::create(d.down1, d.enc2, d.unit_enc2, d.time_dim, rng);
        u.down2 = Conv2dLayer<T>::create(d.enc2, d.down2, 2, 2, 0, rng);
        u.mid = UnetBlock<T>::create(d.down2, d.mid, d.unit_mid, d.time_dim, rng);
        u.dec1 = UnetBlock<T>::create(d.mid + d.enc2, d.dec1, d.unit_dec1, d.time_dim, rng);
        u.dec2 = UnetBlock<T>::create(d.dec1 + d.enc1, d.dec2, d.unit_dec2, d.time_dim, rng);
        u.head = Conv2dLayer<T>::create(d.dec2, 1, 3, 1, 1, rng, /*zero_init=*/true);
        return u;
    }

    /// Fresh random-init model with src's architecture (norm units included).
    static TinyUnet create_like(const TinyUnet& src, Rng& rng) { return create(src.dims, rng); }

    Shape sample_shape(int64_t n) const { return {n, 1, 16, 16}; }

    Tensor<T> forward(Tape<T>& tape, const Tensor<T>& x, std::span<const int64_t> ts) const {
        if (x.ndim() != 4 || x.dim(1) != 1) throw std::invalid_argument("TinyUnet: expected input [N,1,H,W]");
        if (x.dim(2) % 4 != 0 || x.dim(3) % 4 != 0)
            throw std::invalid_argument("TinyUnet: spatial dims must be multiples of 4");
        if (static_cast<int64_t>(ts.size()) != x.dim(0))
            throw std::invalid_argument("TinyUnet: ts length != batch size");
        Tensor<T> e = temb.forward(tape, ts);
        Tensor<T> a = stem.forward(tape, x);
        Tensor<T> s1 = enc1.forward(tape, a, e);
        Tensor<T> d1 = down1.forward(tape, s1);
        Tensor<T> s2 = enc2.forward(tape, d1, e);
        Tensor<T> d2 = down2.forward(tape, s2);
        Tensor<T> m = mid.forward(tape, d2, e);
        Tensor<T> u1 = dec1.forward(tape, tape.concat_channels(tape.upsample_nearest2x(m), s2), e);
        Tensor<T> u2 = dec2.forward(tape, tape.concat_channels(tape.upsample_nearest2x(u1), s1), e);
        return head.forward(tape, u2);
    }

    std::vector<NamedParam<T>> named_params() const {
        std::vector<NamedParam<T>> ps;
        auto conv_params = [&ps](const std::string& base, const Conv2dLayer<T>& c) {
            ps.push_back({base + ".weight", c.weight});
            ps.push_back({base + ".bias", c.bias});
        };
        auto block_params = [&ps](const std::string& base, const UnetBlock<T>& b) {
            ps.push_back({base + ".conv.weight", b.conv.weight});
            ps.push_back({base + ".conv.bias", b.conv.bias});
            ps.push_back({base + ".norm.gamma", b.norm.gamma});
            ps.push_back({base + ".norm.beta", b.norm.beta});
            ps.push_back({base + ".time.weight", b.time.weight});
            ps.push_back({base + ".time.bias", b.time.bias});
        };
        conv_params("stem", stem);
        block_params("enc1", enc1);
        conv_params("down1", down1);
        block_params("enc2", enc2);
        conv_params("down2", down2);
        block_params("mid", mid);
        block_params("dec1", dec1);
        block_params("dec2", dec2);
        conv_params("head", head);
        ps.push_back({"temb.fc1.weight", temb.fc1.weight});
        ps.push_back({"temb.fc1.bias", temb.fc1.bias});
        ps.push_back({"temb.fc2.weight", temb.fc2.weight});
        ps.push_back({"temb.fc2.bias", temb.fc2.bias});
        return ps;
    }

    PrunableSpec prunable_spec() const {
        PrunableSpec spec;
        auto block_producers = [](FamilySpec& f, const std::string& base) {
            f.refs.push_back({base + ".conv.weight", 0, 0, ParamKind::weight_out});
            f.refs.push_back({base + ".conv.bias", 0, 0, ParamKind::bias});
            f.refs.push_back({base + ".norm.gamma", 0, 0, ParamKind::norm_gamma});
            f.refs.push_back({base + ".norm.beta", 0, 0, ParamKind::norm_beta});
            f.refs.push_back({base + ".time.weight", 0, 0, ParamKind::weight_out});
            f.refs.push_back({base + ".time.bias", 0, 0, ParamKind::bias});
        };

        {
            FamilySpec f{"stem", dims.stem, 1, 1, {}};
            f.refs.push_back({"stem.weight", 0, 0, ParamKind::weight_out});
            f.refs.push_back({"stem.bias", 0, 0, ParamKind::bias});
            f.refs.push_back({"enc1.conv.weight", 1, 0, ParamKind::weight_in});
            spec.families.push_back(std::move(f));
        }
        {
            FamilySpec f{"enc1", dims.enc1, dims.unit_enc1, dims.unit_enc1, {}};
            block_producers(f, "enc1");
            f.refs.push_back({"down1.weight", 1, 0, ParamKind::weight_in});
            // skip source: feeds the second half of dec2's concatenated input
            f.refs.push_back({"dec2.conv.weight", 1, dims.dec1, ParamKind::weight_in});
            spec.families.push_back(std::move(f));
        }
        {
            FamilySpec f{"down1", dims.down1, 1, 1, {}};
            f.refs.push_back({"down1.weight", 0, 0, ParamKind::weight_out});
            f.refs.push_back({"down1.bias", 0, 0, ParamKind::bias});
            f.refs.push_back({"enc2.conv.weight", 1, 0, ParamKind::weight_in});
            spec.families.push_back(std::move(f));
        }
        {
            FamilySpec f{"enc2", dims.enc2, dims.unit_enc2, dims.unit_enc2, {}};
            block_producers(f, "enc2");
            f.refs.push_back({"down2.weight", 1, 0, ParamKind::weight_in});
            f.refs.push_back({"dec1.conv.weight", 1, dims.mid, ParamKind::weight_in});
            spec.families.push_back(std::move(f));
        }
        {
            FamilySpec f{"down2", dims.down2, 1, 1, {}};
            f.refs.push_back({"down2.weight", 0, 0, ParamKind::weight_out});
            f.refs.push_back({"down2.bias", 0, 0, ParamKind::bias});
            f.refs.push_back({"mid.conv.weight", 1, 0, ParamKind::weight_in});
            spec.families.push_back(std::move(f));
        }
        {
            FamilySpec f{"mid", dims.mid, dims.unit_mid, dims.unit_mid, {}};
            block_producers(f, "mid");
            f.refs.push_back({"dec1.conv.weight", 1, 0, ParamKind::weight_in});
            spec.families.push_back(std::move(f));
        }
        {
            FamilySpec f{"dec1", dims.dec1, dims.unit_dec1, dims.unit_dec1, {}};
            block_producers(f, "dec1");
            f.refs.push_back({"dec2.conv.weight", 1, 0, ParamKind::weight_in});
            spec.families.push_back(std::move(f));
        }
        {
            FamilySpec f{"dec2", dims.dec2, dims.unit_dec2, dims.unit_dec2, {}};
            block_producers(f, "dec2");
            f.refs.push_back({"head.weight", 1, 0, ParamKind::weight_in});
            spec.families.push_back(std::move(f));
        }
        for (const auto& p : named_params()) spec.inventory.push_back({p.name, p.tensor.shape()});
        return spec;
    }

    std::map<std::string, int64_t> family_sizes() const {
        return {{"stem", dims.stem}, {"enc1", dims.enc1}, {"down1", dims.down1}, {"enc2", dims.enc2},
                {"down2", dims.down2}, {"mid", dims.mid}, {"dec1", dims.dec1}, {"dec2", dims.dec2}};
    }

    TinyUnet resized(const std::map<std::string, int64_t>& sizes) const {
        UnetDims d = dims;
        auto get = [&](const char* k, int64_t cur) {
            auto it = sizes.find(k);
            return it == sizes.end() ? cur : it->second;
        };
        d.stem = get("stem", d.stem);
        d.enc1 = get("enc1", d.enc1);
        d.down1 = get("down1", d.down1);
        d.enc2 = get("enc2", d.enc2);
        d.down2 = get("down2", d.down2);
        d.mid = get("mid", d.mid);
        d.dec1 = get("dec1", d.dec1);
        d.dec2 = get("dec2", d.dec2);
        Rng rng(0);
        return create(d, rng);
    }

    int64_t macs_per_sample(const Shape& input_shape) const {
        Shape s = input_shape;
        if (s.size() == 4) s.erase(s.begin());
        if (s.size() != 3 || s[0] != 1 || s[1] % 4 != 0 || s[2] % 4 != 0)
            throw std::invalid_argument("TinyUnet: macs input shape must be [1,H,W], H,W multiples of 4");
        int64_t H = s[1], W = s[2];
        int64_t macs = 0;
        macs += stem.macs(H, W);
        macs += enc1.conv.macs(H, W);
        macs += down1.macs(H / 2, W / 2);
        macs += enc2.conv.macs(H / 2, W / 2);
        macs += down2.macs(H / 4, W / 4);
        macs += mid.conv.macs(H / 4, W / 4);
        macs += dec1.conv.macs(H / 2, W / 2);
        macs += dec2.conv.macs(H, W);
        macs += head.macs(H, W);
        macs += temb.macs();
        for (const UnetBlock<T>* b : {&enc1, &enc2, &mid, &dec1, &dec2}) macs += b->time.macs();
        return macs;
    }

    TinyUnet deep_clone() const {
        TinyUnet u;
        u.dims = dims;
        u.stem = stem.deep_clone();
        u.enc1 = enc1.deep_clone();
        u.down1 = down1.deep_clone();
        u.enc2 = enc2.deep_clone();
        u.down2 = down2.deep_clone();
        u.mid = mid.deep_clone();
        u.dec1 = dec1.deep_clone();
        u.dec2 = dec2.deep_clone();
        u.head = head.deep_clone();
        u.temb = temb.deep_clone();
        return u;
    }
};

}  // namespace diffprune
