// Copyright (c) 2026 the diffprune authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "diffprune/dtns.hpp"
#include "diffprune/models.hpp"
#include "diffprune/optimizer.hpp"
#include "diffprune/schedule.hpp"

namespace diffprune {

// DPCK checkpoint container:
//   magic "DPCK" | u32 version=1 | u32 json_len | meta json |
//   u32 n_tensors | { u32 name_len | name | DTNS blob } ...
// The meta document carries the architecture descriptor, schedule parameters,
// training-step counter, and the training rng state.
struct Checkpoint {
    nlohmann::json meta;
    std::vector<std::pair<std::string, Tensor<float>>> tensors;

    const Tensor<float>& tensor(const std::string& name) const {
        for (const auto& [n, t] : tensors)
            if (n == name) return t;
        throw std::runtime_error("checkpoint: missing tensor " + name);
    }
    bool has_tensor(const std::string& name) const {
        for (const auto& [n, t] : tensors)
            if (n == name) return true;
        return false;
    }

    void save(const std::string& path) const {
        std::ofstream os(path, std::ios::binary);
        if (!os) throw std::runtime_error("checkpoint: cannot open for write: " + path);
        os.write("DPCK", 4);
        detail::write_le<uint32_t>(os, 1);
        std::string j = meta.dump();
        detail::write_le<uint32_t>(os, static_cast<uint32_t>(j.size()));
        os.write(j.data(), static_cast<std::streamsize>(j.size()));
        detail::write_le<uint32_t>(os, static_cast<uint32_t>(tensors.size()));
        for (const auto& [name, t] : tensors) {
            detail::write_le<uint32_t>(os, static_cast<uint32_t>(name.size()));
            os.write(name.data(), static_cast<std::streamsize>(name.size()));
            write_dtns(os, t);
        }
        if (!os) throw std::runtime_error("checkpoint: write failed: " + path);
    }

    static Checkpoint load(const std::string& path) {
        std::ifstream is(path, std::ios::binary);
        if (!is) throw std::runtime_error("checkpoint: cannot open: " + path);
        char magic[4];
        is.read(magic, 4);
        if (!is || std::memcmp(magic, "DPCK", 4) != 0) throw std::runtime_error("checkpoint: bad magic in " + path);
        uint32_t version = detail::read_le<uint32_t>(is);
        if (version != 1) throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
        uint32_t json_len = detail::read_le<uint32_t>(is);
        std::string j(json_len, '\0');
        is.read(j.data(), json_len);
        if (!is) throw std::runtime_error("checkpoint: truncated meta");
        Checkpoint ckpt;
        ckpt.meta = nlohmann::json::parse(j);
        uint32_t n = detail::read_le<uint32_t>(is);
        for (uint32_t i = 0; i < n; ++i) {
            uint32_t name_len = detail::read_le<uint32_t>(is);
            std::string name(name_len, '\0');
            is.read(name.data(), name_len);
            ckpt.tensors.emplace_back(std::move(name), read_dtns<float>(is));
        }
        return ckpt;
    }
};

// ---- architecture descriptors ----

inline nlohmann::json arch_of(const MlpDenoiser<float>& m) {
    return {{"family", "mlp"}, {"hidden", m.hidden}, {"time_dim", m.time_dim}};
}

inline nlohmann::json arch_of(const TinyUnet<float>& u) {
    const UnetDims& d = u.dims;
    return {{"family", "unet"},
            {"stem", d.stem}, {"enc1", d.enc1}, {"down1", d.down1}, {"enc2", d.enc2},
            {"down2", d.down2}, {"mid", d.mid}, {"dec1", d.dec1}, {"dec2", d.dec2},
            {"unit_enc1", d.unit_enc1}, {"unit_enc2", d.unit_enc2}, {"unit_mid", d.unit_mid},
            {"unit_dec1", d.unit_dec1}, {"unit_dec2", d.unit_dec2}, {"time_dim", d.time_dim}};
}

inline MlpDenoiser<float> mlp_from_arch(const nlohmann::json& a) {
    Rng rng(0);
    return MlpDenoiser<float>::create(a.at("hidden").get<std::vector<int64_t>>(),
                                      a.at("time_dim").get<int64_t>(), rng);
}

inline TinyUnet<float> unet_from_arch(const nlohmann::json& a) {
    UnetDims d;
    d.stem = a.at("stem");
    d.enc1 = a.at("enc1");
    d.down1 = a.at("down1");
    d.enc2 = a.at("enc2");
    d.down2 = a.at("down2");
    d.mid = a.at("mid");
    d.dec1 = a.at("dec1");
    d.dec2 = a.at("dec2");
    d.unit_enc1 = a.at("unit_enc1");
    d.unit_enc2 = a.at("unit_enc2");
    d.unit_mid = a.at("unit_mid");
    d.unit_dec1 = a.at("unit_dec1");
    d.unit_dec2 = a.at("unit_dec2");
    d.time_dim = a.at("time_dim");
    Rng rng(0);
    return TinyUnet<float>::create(d, rng);
}

template <class M>
Checkpoint make_checkpoint(const M& model, const NoiseSchedule& sched, int64_t train_step,
                           const std::string& rng_state, const Adam<float>* opt = nullptr) {
    Checkpoint ckpt;
    ckpt.meta = {{"arch", arch_of(model)},
                 {"schedule", {{"T", sched.T}, {"beta_start", sched.beta_start}, {"beta_end", sched.beta_end}}},
                 {"train_step", train_step},
                 {"rng_state", rng_state}};
    for (const auto& p : model.named_params()) ckpt.tensors.emplace_back(p.name, p.tensor.deep_copy());
    if (opt) {
        ckpt.meta["adam_step"] = opt->step_count;
        ckpt.meta["adam_lr"] = opt->lr;
        for (size_t i = 0; i < opt->params.size(); ++i) {
            ckpt.tensors.emplace_back("adam.m." + opt->params[i].name, opt->m[i].deep_copy());
            ckpt.tensors.emplace_back("adam.v." + opt->params[i].name, opt->v[i].deep_copy());
        }
    }
    return ckpt;
}

inline std::string checkpoint_family(const Checkpoint& ckpt) {
    return ckpt.meta.at("arch").at("family").get<std::string>();
}

inline NoiseSchedule schedule_from_checkpoint(const Checkpoint& ckpt) {
    const auto& s = ckpt.meta.at("schedule");
    return make_linear_schedule(s.at("T").get<int64_t>(), s.at("beta_start").get<double>(),
                                s.at("beta_end").get<double>());
}

template <class M>
void load_params_from_checkpoint(M& model, const Checkpoint& ckpt) {
    for (auto& p : model.named_params()) {
        const Tensor<float>& src = ckpt.tensor(p.name);
        if (src.shape() != p.tensor.shape())
            throw std::runtime_error("checkpoint: shape mismatch for " + p.name);
        std::copy(src.val().begin(), src.val().end(), p.tensor.val().begin());
    }
}

inline MlpDenoiser<float> mlp_from_checkpoint(const Checkpoint& ckpt) {
    if (checkpoint_family(ckpt) != "mlp") throw std::runtime_error("checkpoint: not an mlp checkpoint");
    auto m = mlp_from_arch(ckpt.meta.at("arch"));
    load_params_from_checkpoint(m, ckpt);
    return m;
}

inline TinyUnet<float> unet_from_checkpoint(const Checkpoint& ckpt) {
    if (checkpoint_family(ckpt) != "unet") throw std::runtime_error("checkpoint: not a unet checkpoint");
    auto u = unet_from_arch(ckpt.meta.at("arch"));
    load_params_from_checkpoint(u, ckpt);
    return u;
}

/// Restores Adam moments saved alongside the model parameters, if present.
template <typename T>
void load_adam_state(Adam<T>& opt, const Checkpoint& ckpt) {
    if (!ckpt.meta.contains("adam_step")) return;
    opt.step_count = ckpt.meta.at("adam_step").get<int64_t>();
    for (size_t i = 0; i < opt.params.size(); ++i) {
        const auto& name = opt.params[i].name;
        if (!ckpt.has_tensor("adam.m." + name)) continue;
        const auto& m = ckpt.tensor("adam.m." + name);
        const auto& v = ckpt.tensor("adam.v." + name);
        std::copy(m.val().begin(), m.val().end(), opt.m[i].val().begin());
        std::copy(v.val().begin(), v.val().end(), opt.v[i].val().begin());
    }
}

}  // namespace diffprune
