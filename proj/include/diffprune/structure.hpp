// Copyright (c) 2026 the diffprune authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "diffprune/models.hpp"

namespace diffprune {

struct GroupMember {
    std::string param;
    int axis = 0;
    int64_t index = 0;
};

/// All parameter slices coupled to one prunable unit (a channel, or a whole
/// norm group of channels). Removing every member together keeps the network
/// shape-valid and output-equivalent to zero-masking.
struct ParamGroup {
    int64_t id = 0;
    std::string family;
    int64_t unit_index = 0;
    std::vector<GroupMember> members;
};

namespace detail {

inline const ParamInfo& find_info(const PrunableSpec& spec, const std::string& name) {
    for (const auto& p : spec.inventory)
        if (p.name == name) return p;
    throw std::invalid_argument("structure: spec references unknown parameter " + name);
}

}  // namespace detail

/// Expands a PrunableSpec into concrete groups. Group ids are assigned in
/// family order then unit order, so they are stable for a given architecture.
inline std::vector<ParamGroup> build_groups(const PrunableSpec& spec) {
    std::vector<ParamGroup> groups;
    int64_t id = 0;
    for (const auto& fam : spec.families) {
        if (fam.size < 1 || fam.unit < 1 || fam.size % fam.unit != 0)
            throw std::invalid_argument("structure: family " + fam.name + " size not divisible by unit");
        for (const auto& ref : fam.refs) {
            const auto& info = detail::find_info(spec, ref.param);
            if (ref.axis < 0 || ref.axis >= static_cast<int>(info.shape.size()))
                throw std::invalid_argument("structure: bad axis for " + ref.param);
            if (ref.offset + fam.size > info.shape[static_cast<size_t>(ref.axis)])
                throw std::invalid_argument("structure: family " + fam.name + " overruns " + ref.param);
        }
        for (int64_t u = 0; u < fam.size / fam.unit; ++u) {
            ParamGroup g;
            g.id = id++;
            g.family = fam.name;
            g.unit_index = u;
            for (const auto& ref : fam.refs)
                for (int64_t c = u * fam.unit; c < (u + 1) * fam.unit; ++c)
                    g.members.push_back({ref.param, ref.axis, ref.offset + c});
            groups.push_back(std::move(g));
        }
    }
    return groups;
}

/// Debug export: one line per group listing its member slices.
inline std::string group_report(const std::vector<ParamGroup>& groups) {
    std::ostringstream os;
    for (const auto& g : groups) {
        os << "group " << g.id << " family=" << g.family << " unit=" << g.unit_index << ":";
        for (const auto& m : g.members) os << " " << m.param << ":" << m.axis << ":" << m.index;
        os << "\n";
    }
    return os.str();
}

namespace detail {

template <typename T>
void zero_axis_slice(Tensor<T>& t, int axis, int64_t index) {
    const Shape& s = t.shape();
    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= s[static_cast<size_t>(i)];
    for (size_t i = static_cast<size_t>(axis) + 1; i < s.size(); ++i) inner *= s[i];
    int64_t dim = s[static_cast<size_t>(axis)];
    for (int64_t o = 0; o < outer; ++o) {
        T* base = t.val().data() + (o * dim + index) * inner;
        std::fill(base, base + inner, T(0));
    }
}

inline const ParamGroup& group_by_id(const std::vector<ParamGroup>& groups, int64_t id) {
    for (const auto& g : groups)
        if (g.id == id) return g;
    throw std::invalid_argument("structure: unknown group id " + std::to_string(id));
}

/// out[i0,i1,...] = in[map0[i0], map1[i1], ...]; identity for axes with an
/// empty map.
template <typename T>
Tensor<T> gather(const Tensor<T>& in, const std::vector<std::vector<int64_t>>& axis_maps) {
    Shape out_shape = in.shape();
    for (size_t a = 0; a < axis_maps.size(); ++a)
        if (!axis_maps[a].empty()) out_shape[a] = static_cast<int64_t>(axis_maps[a].size());
    Tensor<T> out(out_shape);
    size_t nd = out_shape.size();
    std::vector<int64_t> idx(nd, 0);
    std::vector<int64_t> in_stride(nd, 1);
    for (size_t a = nd - 1; a > 0; --a) in_stride[a - 1] = in_stride[a] * in.shape()[a];
    for (int64_t flat = 0; flat < out.numel(); ++flat) {
        int64_t rem = flat, src = 0;
        for (size_t a = 0; a < nd; ++a) {
            int64_t stride_out = 1;
            for (size_t b = a + 1; b < nd; ++b) stride_out *= out_shape[b];
            int64_t coord = rem / stride_out;
            rem %= stride_out;
            int64_t src_coord = axis_maps.size() > a && !axis_maps[a].empty() ? axis_maps[a][static_cast<size_t>(coord)] : coord;
            src += src_coord * in_stride[a];
        }
        out[flat] = in[src];
    }
    return out;
}

}  // namespace detail

/// Returns a deep copy with every member slice of the selected groups set to
/// zero. Architecture is unchanged.
template <class M>
M apply_mask(const M& model, const std::vector<ParamGroup>& groups,
             const std::vector<int64_t>& ids_to_zero) {
    M out = model.deep_clone();
    auto params = out.named_params();
    auto find = [&](const std::string& name) -> Tensor<typename M::scalar_type>& {
        for (auto& p : params)
            if (p.name == name) return p.tensor;
        throw std::invalid_argument("apply_mask: unknown parameter " + name);
    };
    for (int64_t id : ids_to_zero) {
        const ParamGroup& g = detail::group_by_id(groups, id);
        for (const auto& m : g.members) detail::zero_axis_slice(find(m.param), m.axis, m.index);
    }
    return out;
}

/// Per-family surviving channel indices after removing the given groups.
inline std::map<std::string, std::vector<int64_t>> surviving_channels(
    const PrunableSpec& spec, const std::vector<ParamGroup>& groups,
    const std::vector<int64_t>& ids_to_remove) {
    std::map<std::string, std::set<int64_t>> removed_units;
    for (int64_t id : ids_to_remove) {
        const ParamGroup& g = detail::group_by_id(groups, id);
        removed_units[g.family].insert(g.unit_index);
    }
    std::map<std::string, std::vector<int64_t>> survivors;
    for (const auto& fam : spec.families) {
        std::vector<int64_t> keep;
        const auto it = removed_units.find(fam.name);
        for (int64_t u = 0; u < fam.size / fam.unit; ++u) {
            if (it != removed_units.end() && it->second.count(u)) continue;
            for (int64_t c = u * fam.unit; c < (u + 1) * fam.unit; ++c) keep.push_back(c);
        }
        if (static_cast<int64_t>(keep.size()) < fam.min_keep)
            throw std::invalid_argument("slice_model: family " + fam.name + " would drop below its survivor minimum");
        survivors[fam.name] = std::move(keep);
    }
    return survivors;
}

/// Physically removes the selected groups: builds a structurally smaller model
/// and copies every surviving weight slice. Outputs match the masked model.
template <class M>
M slice_model(const M& model, const std::vector<ParamGroup>& groups,
              const std::vector<int64_t>& ids_to_remove) {
    using T = typename M::scalar_type;
    PrunableSpec spec = model.prunable_spec();
    auto survivors = surviving_channels(spec, groups, ids_to_remove);

    std::map<std::string, int64_t> new_sizes;
    for (const auto& [fam, keep] : survivors) new_sizes[fam] = static_cast<int64_t>(keep.size());
    M out = model.resized(new_sizes);

    // (param, axis) -> segments ordered by offset; each segment maps the
    // family's surviving channels into old indices.
    std::map<std::pair<std::string, int>, std::vector<std::pair<int64_t, std::string>>> seg;
    for (const auto& fam : spec.families)
        for (const auto& ref : fam.refs) seg[{ref.param, ref.axis}].push_back({ref.offset, fam.name});

    auto src_params = model.named_params();
    auto dst_params = out.named_params();
    for (size_t i = 0; i < src_params.size(); ++i) {
        const auto& name = src_params[i].name;
        const Tensor<T>& src = src_params[i].tensor;
        std::vector<std::vector<int64_t>> axis_maps(static_cast<size_t>(src.ndim()));
        for (int axis = 0; axis < src.ndim(); ++axis) {
            auto it = seg.find({name, axis});
            if (it == seg.end()) continue;
            auto segments = it->second;
            std::sort(segments.begin(), segments.end());
            std::vector<int64_t> map;
            for (const auto& [offset, fam_name] : segments)
                for (int64_t c : survivors.at(fam_name)) map.push_back(offset + c);
            axis_maps[static_cast<size_t>(axis)] = std::move(map);
        }
        Tensor<T> gathered = detail::gather(src, axis_maps);
        if (gathered.shape() != dst_params[i].tensor.shape())
            throw std::logic_error("slice_model: gathered shape mismatch for " + name);
        std::copy(gathered.val().begin(), gathered.val().end(), dst_params[i].tensor.val().begin());
    }
    return out;
}

}  // namespace diffprune
