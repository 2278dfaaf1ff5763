// Copyright (c) 2026 the diffprune authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <fstream>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "diffprune/dataset.hpp"
#include "diffprune/diffusion.hpp"
#include "diffprune/importance.hpp"

namespace diffprune {

namespace detail {

/// Strict key check: unknown keys are configuration errors, not silence.
inline void check_keys(const nlohmann::json& j, const std::set<std::string>& allowed,
                       const std::string& ctx) {
    if (!j.is_object()) throw std::invalid_argument("config: " + ctx + " must be an object");
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!allowed.count(it.key()))
            throw std::invalid_argument("config: unknown key \"" + it.key() + "\" in " + ctx);
}

}  // namespace detail

struct DatasetConfig {
    DatasetKind kind = DatasetKind::gauss8;
    int64_t n = 8192;
    std::string path;  // required for external; otherwise optional override
};

struct ModelConfig {
    std::string family = "mlp";                   // mlp | unet
    std::vector<int64_t> hidden = {64, 64, 64};   // mlp widths
    std::vector<int64_t> channels = {32, 64};     // unet plan [c1, c2]
    int64_t time_dim = 0;                         // 0 = family default (32 mlp, 64 unet)

    int64_t resolved_time_dim() const { return time_dim > 0 ? time_dim : (family == "mlp" ? 32 : 64); }
};

struct ScheduleConfig {
    int64_t T = 1000;
    double beta_start = 1e-4;
    double beta_end = 0.02;
};

struct OptimConfig {
    double lr = 2e-4;
    int64_t steps = 10000;
    int64_t batch_size = 128;
    int64_t save_every = 0;  // 0 = final checkpoint only
};

struct EvalConfig {
    std::string sampler = "ddim";  // ddim | ddpm
    int64_t steps = 100;           // ddim step budget, capped at T
    int64_t n_seeds = 16;
    int64_t n_per_seed = 16;
    int64_t n_samples = 1000;      // sample count for distribution metrics
};

struct SweepConfig {
    std::string axis;                  // threshold | ratio | criterion
    std::vector<double> values;        // for threshold / ratio sweeps
    std::vector<std::string> criteria; // for criterion sweeps
};

struct ExperimentConfig {
    DatasetConfig dataset;
    ModelConfig model;
    ScheduleConfig schedule;
    OptimConfig optimizer;
    PruneConfig prune;
    int64_t finetune_steps = 1000;
    EvalConfig eval;
    SweepConfig sweep;
    uint64_t seed = 0;
    std::string out_dir = "runs/out";

    /// Gradient batch default depends on the model family.
    int64_t resolved_grad_batch() const {
        if (prune.grad_batch > 0) return prune.grad_batch;
        return model.family == "mlp" ? 256 : 64;
    }

    static ExperimentConfig from_json(const nlohmann::json& j);
    static ExperimentConfig from_file(const std::string& path);
    nlohmann::json to_json() const;
};

inline ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
    detail::check_keys(j, {"dataset", "model", "schedule", "optimizer", "prune", "finetune_steps",
                           "eval", "sweep", "seed", "out_dir"},
                       "config");
    ExperimentConfig c;
    if (j.contains("dataset")) {
        const auto& d = j.at("dataset");
        detail::check_keys(d, {"kind", "n", "path"}, "dataset");
        if (d.contains("kind")) c.dataset.kind = dataset_kind_from_name(d.at("kind").get<std::string>());
        if (d.contains("n")) c.dataset.n = d.at("n").get<int64_t>();
        if (d.contains("path")) c.dataset.path = d.at("path").get<std::string>();
        if (c.dataset.kind == DatasetKind::external && c.dataset.path.empty())
            throw std::invalid_argument("config: external dataset requires dataset.path");
        if (c.dataset.n < 1) throw std::invalid_argument("config: dataset.n must be >= 1");
    }
    if (j.contains("model")) {
        const auto& m = j.at("model");
        detail::check_keys(m, {"family", "hidden", "channels", "time_dim"}, "model");
        if (m.contains("family")) c.model.family = m.at("family").get<std::string>();
        if (c.model.family != "mlp" && c.model.family != "unet")
            throw std::invalid_argument("config: model.family must be mlp or unet");
        if (m.contains("hidden")) c.model.hidden = m.at("hidden").get<std::vector<int64_t>>();
        if (m.contains("channels")) c.model.channels = m.at("channels").get<std::vector<int64_t>>();
        if (m.contains("time_dim")) c.model.time_dim = m.at("time_dim").get<int64_t>();
        if (c.model.family == "unet" && c.model.channels.size() != 2)
            throw std::invalid_argument("config: model.channels must be [c1, c2]");
    }
    if (j.contains("schedule")) {
        const auto& s = j.at("schedule");
        detail::check_keys(s, {"T", "beta_start", "beta_end"}, "schedule");
        if (s.contains("T")) c.schedule.T = s.at("T").get<int64_t>();
        if (s.contains("beta_start")) c.schedule.beta_start = s.at("beta_start").get<double>();
        if (s.contains("beta_end")) c.schedule.beta_end = s.at("beta_end").get<double>();
    }
    if (j.contains("optimizer")) {
        const auto& o = j.at("optimizer");
        detail::check_keys(o, {"lr", "steps", "batch_size", "save_every"}, "optimizer");
        if (o.contains("lr")) c.optimizer.lr = o.at("lr").get<double>();
        if (o.contains("steps")) c.optimizer.steps = o.at("steps").get<int64_t>();
        if (o.contains("batch_size")) c.optimizer.batch_size = o.at("batch_size").get<int64_t>();
        if (o.contains("save_every")) c.optimizer.save_every = o.at("save_every").get<int64_t>();
        if (c.optimizer.steps < 0 || c.optimizer.batch_size < 1)
            throw std::invalid_argument("config: bad optimizer counts");
    }
    if (j.contains("prune")) {
        const auto& p = j.at("prune");
        detail::check_keys(p, {"criterion", "target_kind", "target_value", "threshold", "grad_batch",
                               "draws_per_step", "profile_draws", "taylor_step"},
                           "prune");
        if (p.contains("criterion")) c.prune.criterion = criterion_from_name(p.at("criterion").get<std::string>());
        if (p.contains("target_kind")) {
            std::string k = p.at("target_kind").get<std::string>();
            if (k == "param_ratio") c.prune.target.kind = PruneTarget::Kind::param_ratio;
            else if (k == "macs_ratio") c.prune.target.kind = PruneTarget::Kind::macs_ratio;
            else throw std::invalid_argument("config: prune.target_kind must be param_ratio or macs_ratio");
        }
        if (p.contains("target_value")) c.prune.target.value = p.at("target_value").get<double>();
        if (p.contains("threshold")) c.prune.threshold = p.at("threshold").get<double>();
        if (p.contains("grad_batch")) c.prune.grad_batch = p.at("grad_batch").get<int64_t>();
        else c.prune.grad_batch = 0;  // family default
        if (p.contains("draws_per_step")) c.prune.draws_per_step = p.at("draws_per_step").get<int64_t>();
        if (p.contains("profile_draws")) c.prune.profile_draws = p.at("profile_draws").get<int64_t>();
        if (p.contains("taylor_step")) c.prune.taylor_step = p.at("taylor_step").get<int64_t>();
        if (c.prune.threshold < 0) throw std::invalid_argument("config: prune.threshold must be >= 0");
        if (!(c.prune.target.value >= 0.0 && c.prune.target.value < 1.0))
            throw std::invalid_argument("config: prune.target_value must be in [0, 1)");
    } else {
        c.prune.grad_batch = 0;
    }
    if (j.contains("finetune_steps")) c.finetune_steps = j.at("finetune_steps").get<int64_t>();
    if (c.finetune_steps < 0) throw std::invalid_argument("config: finetune_steps must be >= 0");
    if (j.contains("eval")) {
        const auto& e = j.at("eval");
        detail::check_keys(e, {"sampler", "steps", "n_seeds", "n_per_seed", "n_samples"}, "eval");
        if (e.contains("sampler")) c.eval.sampler = e.at("sampler").get<std::string>();
        if (c.eval.sampler != "ddim" && c.eval.sampler != "ddpm")
            throw std::invalid_argument("config: eval.sampler must be ddim or ddpm");
        if (e.contains("steps")) c.eval.steps = e.at("steps").get<int64_t>();
        if (e.contains("n_seeds")) c.eval.n_seeds = e.at("n_seeds").get<int64_t>();
        if (e.contains("n_per_seed")) c.eval.n_per_seed = e.at("n_per_seed").get<int64_t>();
        if (e.contains("n_samples")) c.eval.n_samples = e.at("n_samples").get<int64_t>();
    }
    if (j.contains("sweep")) {
        const auto& s = j.at("sweep");
        detail::check_keys(s, {"axis", "values", "criteria"}, "sweep");
        if (s.contains("axis")) c.sweep.axis = s.at("axis").get<std::string>();
        if (s.contains("values")) c.sweep.values = s.at("values").get<std::vector<double>>();
        if (s.contains("criteria")) c.sweep.criteria = s.at("criteria").get<std::vector<std::string>>();
    }
    if (j.contains("seed")) c.seed = j.at("seed").get<uint64_t>();
    if (j.contains("out_dir")) c.out_dir = j.at("out_dir").get<std::string>();
    return c;
}

inline ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("config: cannot open " + path);
    nlohmann::json j;
    is >> j;
    return from_json(j);
}

inline nlohmann::json ExperimentConfig::to_json() const {
    nlohmann::json j;
    j["dataset"] = {{"kind", dataset_kind_name(dataset.kind)}, {"n", dataset.n}, {"path", dataset.path}};
    j["model"] = {{"family", model.family}, {"hidden", model.hidden}, {"channels", model.channels},
                  {"time_dim", model.time_dim}};
    j["schedule"] = {{"T", schedule.T}, {"beta_start", schedule.beta_start}, {"beta_end", schedule.beta_end}};
    j["optimizer"] = {{"lr", optimizer.lr}, {"steps", optimizer.steps},
                      {"batch_size", optimizer.batch_size}, {"save_every", optimizer.save_every}};
    j["prune"] = {{"criterion", criterion_name(prune.criterion)},
                  {"target_kind", prune.target.kind == PruneTarget::Kind::param_ratio ? "param_ratio" : "macs_ratio"},
                  {"target_value", prune.target.value},
                  {"threshold", prune.threshold},
                  {"grad_batch", prune.grad_batch},
                  {"draws_per_step", prune.draws_per_step},
                  {"profile_draws", prune.profile_draws},
                  {"taylor_step", prune.taylor_step}};
    j["finetune_steps"] = finetune_steps;
    j["eval"] = {{"sampler", eval.sampler}, {"steps", eval.steps}, {"n_seeds", eval.n_seeds},
                 {"n_per_seed", eval.n_per_seed}, {"n_samples", eval.n_samples}};
    if (!sweep.axis.empty())
        j["sweep"] = {{"axis", sweep.axis}, {"values", sweep.values}, {"criteria", sweep.criteria}};
    j["seed"] = seed;
    j["out_dir"] = out_dir;
    return j;
}

}  // namespace diffprune
