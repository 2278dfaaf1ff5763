// Copyright (c) 2026 the diffprune authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "diffprune/diffusion.hpp"
#include "diffprune/structure.hpp"

namespace diffprune {

enum class Criterion { random, magnitude, taylor, diff_pruning };

inline const char* criterion_name(Criterion c) {
    switch (c) {
        case Criterion::random: return "random";
        case Criterion::magnitude: return "magnitude";
        case Criterion::taylor: return "taylor";
        case Criterion::diff_pruning: return "diff_pruning";
    }
    return "?";
}

inline Criterion criterion_from_name(const std::string& s) {
    if (s == "random") return Criterion::random;
    if (s == "magnitude") return Criterion::magnitude;
    if (s == "taylor") return Criterion::taylor;
    if (s == "diff_pruning") return Criterion::diff_pruning;
    throw std::invalid_argument("unknown criterion: " + s);
}

struct PruneTarget {
    enum class Kind { param_ratio, macs_ratio };
    Kind kind = Kind::macs_ratio;
    double value = 0.44;  // fraction to remove
};

struct PruneConfig {
    Criterion criterion = Criterion::diff_pruning;
    PruneTarget target;
    double threshold = 0.05;
    int64_t grad_batch = 256;
    int64_t draws_per_step = 1;
    int64_t profile_draws = 64;   // samples per timestep for the loss profile
    int64_t taylor_step = 0;      // 0 = use the argmax-loss timestep
    uint64_t seed = 0;

    void validate() const {
        if (!(target.value >= 0.0 && target.value < 1.0))
            throw std::invalid_argument("PruneConfig: target value must be in [0, 1)");
        if (threshold < 0.0) throw std::invalid_argument("PruneConfig: threshold must be >= 0");
        if (grad_batch < 1 || draws_per_step < 1 || profile_draws < 1)
            throw std::invalid_argument("PruneConfig: batch/draw counts must be >= 1");
    }
};

/// Binary kept mask over timesteps: kept[t-1] <=> L_t / L_max > threshold.
struct ThresholdMask {
    std::vector<bool> kept;

    int64_t kept_count() const {
        int64_t n = 0;
        for (bool k : kept) n += k ? 1 : 0;
        return n;
    }
    std::vector<int64_t> kept_steps() const {
        std::vector<int64_t> ts;
        for (size_t i = 0; i < kept.size(); ++i)
            if (kept[i]) ts.push_back(static_cast<int64_t>(i) + 1);
        return ts;
    }
};

inline ThresholdMask threshold_timesteps(const LossProfile& profile, double threshold) {
    double lmax = profile.l_max();
    if (!(lmax > 0.0)) throw std::invalid_argument("threshold_timesteps: zero L_max profile");
    ThresholdMask mask;
    mask.kept.resize(profile.L.size());
    for (size_t i = 0; i < profile.L.size(); ++i) mask.kept[i] = profile.L[i] / lmax > threshold;
    return mask;
}

/// Per-group scores plus provenance; score index == group id.
struct ImportanceScore {
    std::vector<double> score;
    Criterion criterion = Criterion::random;
    uint64_t seed = 0;
    std::vector<int64_t> gradient_steps;  // timesteps whose gradients fed the score
};

// ---- group aggregation kernels ----

inline double group_score_magnitude(std::span<const double> theta) {
    double s = 0;
    for (double v : theta) s += std::abs(v);
    return s;
}

/// Sum_k |theta_k * g_k|: the abs-of-product aggregation used for structural
/// groups (contrast with the plain multi-variable form |sum_k theta_k g_k|).
inline double group_score_taylor(std::span<const double> theta, std::span<const double> grads) {
    if (theta.size() != grads.size()) throw std::invalid_argument("group_score_taylor: length mismatch");
    double s = 0;
    for (size_t i = 0; i < theta.size(); ++i) s += std::abs(theta[i] * grads[i]);
    return s;
}

namespace detail {

template <typename T, class Fn>
void for_each_slice_index(const Tensor<T>& t, int axis, int64_t index, Fn&& fn) {
    const Shape& s = t.shape();
    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= s[static_cast<size_t>(i)];
    for (size_t i = static_cast<size_t>(axis) + 1; i < s.size(); ++i) inner *= s[i];
    int64_t dim = s[static_cast<size_t>(axis)];
    for (int64_t o = 0; o < outer; ++o) {
        int64_t base = (o * dim + index) * inner;
        for (int64_t j = 0; j < inner; ++j) fn(base + j);
    }
}

template <class M>
std::map<std::string, Tensor<typename M::scalar_type>> param_map(const M& model) {
    std::map<std::string, Tensor<typename M::scalar_type>> m;
    for (const auto& p : model.named_params()) m.emplace(p.name, p.tensor);
    return m;
}

/// Scores every group as sum over members of |theta * grad| using whatever
/// gradients are currently accumulated on the model (missing grads are zero).
template <class M>
std::vector<double> scores_from_accumulated_grads(const M& model, const std::vector<ParamGroup>& groups) {
    auto params = param_map(model);
    std::vector<double> scores(groups.size(), 0.0);
    for (size_t gi = 0; gi < groups.size(); ++gi) {
        double s = 0;
        for (const auto& mem : groups[gi].members) {
            const auto& t = params.at(mem.param);
            if (!t.has_grad()) continue;
            auto g = t.grad_view();
            for_each_slice_index(t, mem.axis, mem.index, [&](int64_t i) {
                s += std::abs(static_cast<double>(t[i]) * static_cast<double>(g[i]));
            });
        }
        scores[gi] = s;
    }
    return scores;
}

template <typename T, class M>
void accumulate_timestep_grads(M& model, const Tensor<T>& dataset, int64_t t,
                               const NoiseSchedule& sched, const PruneConfig& cfg) {
    for (int64_t d = 0; d < cfg.draws_per_step; ++d) {
        Rng rng(seed_stream(cfg.seed, static_cast<uint64_t>(t), static_cast<uint64_t>(d)));
        std::vector<int64_t> idx(static_cast<size_t>(cfg.grad_batch));
        for (auto& i : idx) i = rng.uniform_int(0, dataset.dim(0) - 1);
        Tensor<T> x0 = take_rows(dataset, idx);
        Tensor<T> eps = normal_like<T>(x0.shape(), rng);
        Tape<T> tape;
        tape.backward(timestep_loss(tape, model, x0, t, eps, sched));
    }
}

}  // namespace detail

inline std::vector<ParamGroup> check_groups(const std::vector<ParamGroup>& groups) {
    if (groups.empty()) throw std::invalid_argument("importance: empty group list");
    return groups;
}

template <class M>
ImportanceScore score_random(const M&, const std::vector<ParamGroup>& groups, uint64_t seed) {
    ImportanceScore s;
    s.criterion = Criterion::random;
    s.seed = seed;
    Rng rng(seed);
    s.score.resize(groups.size());
    for (auto& v : s.score) v = rng.uniform();
    return s;
}

template <class M>
ImportanceScore score_magnitude(const M& model, const std::vector<ParamGroup>& groups) {
    auto params = detail::param_map(model);
    ImportanceScore s;
    s.criterion = Criterion::magnitude;
    s.score.resize(groups.size(), 0.0);
    for (size_t gi = 0; gi < groups.size(); ++gi) {
        double acc = 0;
        for (const auto& mem : groups[gi].members) {
            const auto& t = params.at(mem.param);
            detail::for_each_slice_index(t, mem.axis, mem.index,
                                         [&](int64_t i) { acc += std::abs(static_cast<double>(t[i])); });
        }
        s.score[gi] = acc;
    }
    return s;
}

/// First-order loss-disruption estimate from a single backward pass at one
/// timestep; data and noise are drawn deterministically from (seed, t).
template <typename T, class M>
ImportanceScore score_taylor(M& model, const std::vector<ParamGroup>& groups,
                             const Tensor<T>& dataset, int64_t t_single, const NoiseSchedule& sched,
                             const PruneConfig& cfg) {
    sched.check(t_single);
    set_requires_grad(model, true);
    zero_grads(model);
    detail::accumulate_timestep_grads(model, dataset, t_single, sched, cfg);
    ImportanceScore s;
    s.criterion = Criterion::taylor;
    s.seed = cfg.seed;
    s.gradient_steps = {t_single};
    s.score = detail::scores_from_accumulated_grads(model, groups);
    zero_grads(model);
    return s;
}

/// Thresholded-timestep group Taylor score: gradients are accumulated (summed)
/// over every kept timestep before weighting by theta and taking the absolute
/// value per scalar member.
template <typename T, class M>
ImportanceScore score_diff_pruning(M& model, const std::vector<ParamGroup>& groups,
                                   const Tensor<T>& dataset, const NoiseSchedule& sched,
                                   const LossProfile& profile, const PruneConfig& cfg) {
    ThresholdMask mask = threshold_timesteps(profile, cfg.threshold);
    std::vector<int64_t> steps = mask.kept_steps();
    if (steps.empty())
        throw std::invalid_argument("score_diff_pruning: threshold " + std::to_string(cfg.threshold) +
                                    " keeps no timesteps");
    set_requires_grad(model, true);
    zero_grads(model);
    for (int64_t t : steps) detail::accumulate_timestep_grads(model, dataset, t, sched, cfg);
    ImportanceScore s;
    s.criterion = Criterion::diff_pruning;
    s.seed = cfg.seed;
    s.gradient_steps = steps;
    s.score = detail::scores_from_accumulated_grads(model, groups);
    zero_grads(model);
    return s;
}

/// Group ids ordered by ascending score, ties broken by ascending id.
inline std::vector<int64_t> ranked_group_ids(const ImportanceScore& scores,
                                             const std::vector<ParamGroup>& groups) {
    if (scores.score.size() != groups.size())
        throw std::invalid_argument("ranked_group_ids: scores do not cover all groups");
    std::vector<int64_t> order(groups.size());
    for (size_t i = 0; i < groups.size(); ++i) order[i] = groups[i].id;
    std::sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
        double sa = scores.score[static_cast<size_t>(a)], sb = scores.score[static_cast<size_t>(b)];
        if (sa != sb) return sa < sb;
        return a < b;
    });
    return order;
}

/// One-shot selection at a uniform per-family sparsity: every channel family
/// sheds units in proportion, the criterion scores decide which units go
/// within each family, and counts are recomputed analytically after every
/// removal until the ratio target is met. Of the two states adjacent to the
/// target (just under, just over), the closer one is returned. Proportional
/// removal keeps low-resolution stages from being hollowed out by the raw
/// score scale differences between families.
template <class M>
std::vector<int64_t> select_groups(const ImportanceScore& scores, const M& model,
                                   const std::vector<ParamGroup>& groups, const PruneTarget& target,
                                   const Shape& input_shape) {
    if (target.value <= 0.0) return {};
    if (target.value >= 1.0) throw std::invalid_argument("select_groups: target ratio must be < 1");
    if (scores.score.size() != groups.size())
        throw std::invalid_argument("select_groups: scores do not cover all groups");
    PrunableSpec spec = model.prunable_spec();
    auto sizes = model.family_sizes();

    auto measure = [&](const std::map<std::string, int64_t>& sz) -> double {
        M probe = model.resized(sz);
        return target.kind == PruneTarget::Kind::param_ratio
                   ? static_cast<double>(param_count(probe))
                   : static_cast<double>(probe.macs_per_sample(input_shape));
    };
    double base = measure(sizes);

    // Per family: removable units ordered by ascending score (ties by id),
    // capped so the survivor minimum always holds.
    struct FamilyQueue {
        const FamilySpec* fam = nullptr;
        std::vector<int64_t> order;  // group ids, cheapest first
        int64_t total_units = 0;
        int64_t taken = 0;
        int64_t capacity = 0;
    };
    std::vector<FamilyQueue> queues;
    for (const auto& fam : spec.families) {
        FamilyQueue q;
        q.fam = &fam;
        for (const auto& g : groups)
            if (g.family == fam.name) q.order.push_back(g.id);
        std::sort(q.order.begin(), q.order.end(), [&](int64_t a, int64_t b) {
            double sa = scores.score[static_cast<size_t>(a)], sb = scores.score[static_cast<size_t>(b)];
            if (sa != sb) return sa < sb;
            return a < b;
        });
        q.total_units = static_cast<int64_t>(q.order.size());
        q.capacity = q.total_units - (fam.min_keep + fam.unit - 1) / fam.unit;
        queues.push_back(std::move(q));
    }

    std::vector<int64_t> removed;
    double reduction = 0.0;
    for (;;) {
        // next removal comes from the family lagging furthest behind the
        // uniform sparsity front
        FamilyQueue* next = nullptr;
        double best = 2.0;
        for (auto& q : queues) {
            if (q.taken >= q.capacity) continue;
            double progress = static_cast<double>(q.taken + 1) / static_cast<double>(q.total_units);
            if (progress < best) {
                best = progress;
                next = &q;
            }
        }
        if (!next) throw std::runtime_error("select_groups: target unreachable under structural constraints");

        double prev_reduction = reduction;
        int64_t id = next->order[static_cast<size_t>(next->taken++)];
        sizes.at(next->fam->name) -= next->fam->unit;
        removed.push_back(id);
        reduction = 1.0 - measure(sizes) / base;
        if (reduction >= target.value) {
            if (std::abs(prev_reduction - target.value) < std::abs(reduction - target.value)) {
                removed.pop_back();
                sizes.at(next->fam->name) += next->fam->unit;
            }
            return removed;
        }
    }
}

/// CSV export: group_id, layer, score, rank, removed.
inline std::string scores_csv(const ImportanceScore& scores, const std::vector<ParamGroup>& groups,
                              const std::vector<int64_t>& removed) {
    std::set<int64_t> rm(removed.begin(), removed.end());
    std::vector<int64_t> order = ranked_group_ids(scores, groups);
    std::vector<int64_t> rank(order.size());
    for (size_t i = 0; i < order.size(); ++i) rank[static_cast<size_t>(order[i])] = static_cast<int64_t>(i) + 1;
    std::ostringstream os;
    os << "group_id,layer,score,rank,removed\n";
    char buf[64];
    for (const auto& g : groups) {
        std::snprintf(buf, sizeof(buf), "%.9g", scores.score[static_cast<size_t>(g.id)]);
        os << g.id << "," << g.family << "," << buf << "," << rank[static_cast<size_t>(g.id)] << ","
           << (rm.count(g.id) ? 1 : 0) << "\n";
    }
    return os.str();
}

}  // namespace diffprune
