// Copyright (c) 2026 the diffprune authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "diffprune/checkpoint.hpp"
#include "diffprune/config.hpp"
#include "diffprune/dataset.hpp"
#include "diffprune/importance.hpp"
#include "diffprune/metrics.hpp"
#include "diffprune/pgm.hpp"

namespace diffprune {

inline std::string fmt_g(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

/// Ordered key/value report. Deterministic fields reproduce bit-identically
/// under a fixed config and seed; wall-clock timings live in a separate
/// section excluded from reproducibility comparisons.
struct RunReport {
    std::vector<std::pair<std::string, std::string>> fields;
    std::vector<std::pair<std::string, double>> timings;

    void set(const std::string& key, const std::string& value) { fields.emplace_back(key, value); }
    void set(const std::string& key, int64_t value) { fields.emplace_back(key, std::to_string(value)); }
    void set(const std::string& key, double value) { fields.emplace_back(key, fmt_g(value)); }
    void time(const std::string& stage, double seconds) { timings.emplace_back(stage, seconds); }

    std::string get(const std::string& key) const {
        for (const auto& [k, v] : fields)
            if (k == key) return v;
        throw std::invalid_argument("RunReport: missing field " + key);
    }
    double get_num(const std::string& key) const { return std::stod(get(key)); }

    std::string text() const {
        std::string out;
        for (const auto& [k, v] : fields) out += k + " = " + v + "\n";
        if (!timings.empty()) {
            out += "--- timing (non-deterministic) ---\n";
            for (const auto& [k, v] : timings) out += k + " = " + fmt_g(v) + " s\n";
        }
        return out;
    }

    std::string csv() const {
        std::string head, row;
        for (const auto& [k, v] : fields) {
            head += (head.empty() ? "" : ",") + k;
            row += (row.empty() ? "" : ",") + v;
        }
        return head + "\n" + row + "\n";
    }

    void write(const std::string& dir, const std::string& stem) const {
        std::ofstream(dir + "/" + stem + ".txt") << text();
        std::ofstream(dir + "/" + stem + ".csv") << csv();
    }
};

class StageTimer {
public:
    StageTimer(RunReport& report, std::string stage)
        : report_(report), stage_(std::move(stage)), start_(std::chrono::steady_clock::now()) {}
    ~StageTimer() {
        report_.time(stage_, std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count());
    }

private:
    RunReport& report_;
    std::string stage_;
    std::chrono::steady_clock::time_point start_;
};

// Stream tags for deriving independent deterministic seeds from the one
// experiment seed.
namespace seeds {
constexpr uint64_t dataset = 1, init = 2, train = 3, profile = 4, score = 5, finetune = 6,
                   scratch = 7, eval = 8, sample = 9;
}

inline std::string dataset_path(const ExperimentConfig& cfg) {
    return cfg.dataset.path.empty() ? cfg.out_dir + "/dataset.dtns" : cfg.dataset.path;
}

/// Reads the configured dataset file if present; otherwise generates it
/// deterministically from (kind, n, seed). External datasets must exist.
inline Tensor<float> load_or_generate_dataset(const ExperimentConfig& cfg) {
    std::string path = dataset_path(cfg);
    if (std::filesystem::exists(path)) return read_dtns<float>(path);
    if (cfg.dataset.kind == DatasetKind::external)
        throw std::runtime_error("dataset: external file not found: " + path);
    return generate_dataset(cfg.dataset.kind, cfg.dataset.n, seed_stream(cfg.seed, seeds::dataset));
}

inline RunReport write_dataset(const ExperimentConfig& cfg) {
    std::filesystem::create_directories(cfg.out_dir);
    Tensor<float> data = generate_dataset(cfg.dataset.kind, cfg.dataset.n, seed_stream(cfg.seed, seeds::dataset));
    std::string path = dataset_path(cfg);
    write_dtns(path, data);
    RunReport report;
    report.set("command", "gen-data");
    report.set("kind", dataset_kind_name(cfg.dataset.kind));
    report.set("n", cfg.dataset.n);
    report.set("path", path);
    return report;
}

inline Shape model_input_shape(const std::string& family) {
    return family == "mlp" ? Shape{2} : Shape{1, 16, 16};
}

/// Builds the configured model family with the given init stream.
inline MlpDenoiser<float> build_mlp(const ExperimentConfig& cfg, uint64_t seed_tag) {
    Rng rng(seed_stream(cfg.seed, seed_tag));
    return MlpDenoiser<float>::create(cfg.model.hidden, cfg.model.resolved_time_dim(), rng);
}

inline TinyUnet<float> build_unet(const ExperimentConfig& cfg, uint64_t seed_tag) {
    Rng rng(seed_stream(cfg.seed, seed_tag));
    return TinyUnet<float>::create(cfg.model.channels[0], cfg.model.channels[1],
                                   cfg.model.resolved_time_dim(), rng);
}

/// Dispatches fn(model) on the checkpoint's model family.
template <class Fn>
auto with_checkpoint_model(const Checkpoint& ckpt, Fn&& fn) {
    if (checkpoint_family(ckpt) == "mlp") {
        auto m = mlp_from_checkpoint(ckpt);
        return fn(m);
    }
    auto u = unet_from_checkpoint(ckpt);
    return fn(u);
}

// ---------------------------------------------------------------------------
// training loop
// ---------------------------------------------------------------------------

/// Noise-prediction training with uniformly drawn per-sample timesteps. Draw
/// order per step is fixed (indices, timesteps, noise), so a restored rng
/// state continues the exact stream. Aborts on non-finite loss.
template <class M>
double train_steps(M& model, Adam<float>& opt, Rng& rng, const Tensor<float>& data,
                   const NoiseSchedule& sched, int64_t step_begin, int64_t step_end, int64_t batch,
                   std::vector<std::pair<int64_t, double>>* loss_log,
                   const std::function<void(int64_t)>& on_checkpoint = {}, int64_t save_every = 0) {
    if (data.dim(0) < 1) throw std::invalid_argument("train: empty dataset");
    double last_loss = 0;
    for (int64_t step = step_begin; step < step_end; ++step) {
        std::vector<int64_t> idx(static_cast<size_t>(batch));
        for (auto& i : idx) i = rng.uniform_int(0, data.dim(0) - 1);
        std::vector<int64_t> ts(static_cast<size_t>(batch));
        for (auto& t : ts) t = rng.uniform_int(1, sched.T);
        Tensor<float> x0 = take_rows(data, idx);
        Tensor<float> eps = normal_like<float>(x0.shape(), rng);
        Tensor<float> xt = q_sample(x0, ts, eps, sched);

        opt.zero_grad();
        Tape<float> tape;
        Tensor<float> loss = tape.mse_loss(model.forward(tape, xt, ts), eps);
        last_loss = static_cast<double>(loss.item());
        if (!std::isfinite(last_loss))
            throw std::runtime_error("train: diverged (non-finite loss) at step " + std::to_string(step + 1));
        tape.backward(loss);
        opt.step();

        int64_t done = step + 1;
        if (loss_log && (done % 50 == 0 || done == step_end)) loss_log->emplace_back(done, last_loss);
        if (on_checkpoint && save_every > 0 && done % save_every == 0 && done != step_end) on_checkpoint(done);
    }
    return last_loss;
}

/// Mean diffusion loss over n seeded draws with uniform timesteps; used as a
/// held-out-style validation number.
template <class M>
double validation_loss(M& model, const Tensor<float>& data, const NoiseSchedule& sched, int64_t n,
                       uint64_t seed) {
    Rng rng(seed);
    std::vector<int64_t> idx(static_cast<size_t>(n));
    for (auto& i : idx) i = rng.uniform_int(0, data.dim(0) - 1);
    std::vector<int64_t> ts(static_cast<size_t>(n));
    for (auto& t : ts) t = rng.uniform_int(1, sched.T);
    Tensor<float> x0 = take_rows(data, idx);
    Tensor<float> eps = normal_like<float>(x0.shape(), rng);
    Tensor<float> xt = q_sample(x0, ts, eps, sched);
    Tape<float> tape(false);
    return static_cast<double>(tape.mse_loss(model.forward(tape, xt, ts), eps).item());
}

namespace detail {

template <class M>
RunReport train_impl(const ExperimentConfig& cfg, M model, int64_t step0, Rng rng, Adam<float> opt,
                     const NoiseSchedule& sched, const Tensor<float>& data, const char* command,
                     int64_t target_steps, const std::string& out_ckpt) {
    RunReport report;
    std::vector<std::pair<int64_t, double>> loss_log;
    double final_loss = 0;
    {
        StageTimer timer(report, "train");
        auto save_intermediate = [&](int64_t step) {
            auto ck = make_checkpoint(model, sched, step, rng.state(), &opt);
            ck.save(cfg.out_dir + "/ckpt_" + std::to_string(step) + ".dpck");
        };
        final_loss = train_steps(model, opt, rng, data, sched, step0, target_steps,
                                 cfg.optimizer.batch_size, &loss_log, save_intermediate,
                                 cfg.optimizer.save_every);
    }
    make_checkpoint(model, sched, target_steps, rng.state(), &opt).save(out_ckpt);

    std::ofstream log(cfg.out_dir + "/loss_log.csv");
    log << "step,loss\n";
    for (const auto& [s, l] : loss_log) log << s << "," << fmt_g(l) << "\n";

    report.set("command", command);
    report.set("family", cfg.model.family);
    report.set("params", param_count(model));
    report.set("macs_per_sample", model.macs_per_sample(model_input_shape(cfg.model.family)));
    report.set("steps", target_steps - step0);
    report.set("total_steps", target_steps);
    report.set("batch_size", cfg.optimizer.batch_size);
    report.set("final_loss", final_loss);
    report.set("checkpoint", out_ckpt);
    report.set("seed", static_cast<int64_t>(cfg.seed));
    return report;
}

}  // namespace detail

/// Trains the configured model from scratch, or continues from resume_ckpt
/// until the configured total step count.
inline RunReport run_train(const ExperimentConfig& cfg, const std::string& resume_ckpt = "") {
    std::filesystem::create_directories(cfg.out_dir);
    Tensor<float> data = load_or_generate_dataset(cfg);
    std::string out_ckpt = cfg.out_dir + "/ckpt_final.dpck";

    if (!resume_ckpt.empty()) {
        Checkpoint ckpt = Checkpoint::load(resume_ckpt);
        NoiseSchedule sched = schedule_from_checkpoint(ckpt);
        int64_t step0 = ckpt.meta.at("train_step").get<int64_t>();
        Rng rng;
        rng.set_state(ckpt.meta.at("rng_state").get<std::string>());
        return with_checkpoint_model(ckpt, [&](auto& model) {
            auto opt = Adam<float>::attach(model.named_params(), cfg.optimizer.lr);
            load_adam_state(opt, ckpt);
            RunReport r = detail::train_impl(cfg, model, step0, rng, opt, sched, data, "train",
                                             cfg.optimizer.steps, out_ckpt);
            r.write(cfg.out_dir, "train_report");
            return r;
        });
    }

    NoiseSchedule sched = make_linear_schedule(cfg.schedule.T, cfg.schedule.beta_start, cfg.schedule.beta_end);
    Rng rng(seed_stream(cfg.seed, seeds::train));
    auto go = [&](auto model) {
        auto opt = Adam<float>::attach(model.named_params(), cfg.optimizer.lr);
        RunReport r = detail::train_impl(cfg, model, 0, rng, opt, sched, data, "train",
                                         cfg.optimizer.steps, out_ckpt);
        r.write(cfg.out_dir, "train_report");
        return r;
    };
    return cfg.model.family == "mlp" ? go(build_mlp(cfg, seeds::init)) : go(build_unet(cfg, seeds::init));
}

// ---------------------------------------------------------------------------
// profiling and pruning
// ---------------------------------------------------------------------------

inline void write_profile_csv(const std::string& path, const LossProfile& profile) {
    std::ofstream os(path);
    os << "t,loss,relative\n";
    double lmax = profile.l_max();
    for (int64_t t = 1; t <= profile.T(); ++t)
        os << t << "," << fmt_g(profile.at(t)) << "," << fmt_g(lmax > 0 ? profile.at(t) / lmax : 0.0) << "\n";
}

inline RunReport run_profile(const ExperimentConfig& cfg, const std::string& ckpt_path) {
    std::filesystem::create_directories(cfg.out_dir);
    Checkpoint ckpt = Checkpoint::load(ckpt_path);
    NoiseSchedule sched = schedule_from_checkpoint(ckpt);
    Tensor<float> data = load_or_generate_dataset(cfg);
    return with_checkpoint_model(ckpt, [&](auto& model) {
        RunReport report;
        LossProfile profile;
        {
            StageTimer timer(report, "profile");
            profile = estimate_loss_profile(model, data, sched, cfg.prune.profile_draws,
                                            seed_stream(cfg.seed, seeds::profile));
        }
        write_profile_csv(cfg.out_dir + "/profile.csv", profile);
        ThresholdMask mask = threshold_timesteps(profile, cfg.prune.threshold);
        report.set("command", "profile");
        report.set("T", sched.T);
        report.set("l_max", profile.l_max());
        report.set("threshold", cfg.prune.threshold);
        report.set("kept_steps", mask.kept_count());
        report.write(cfg.out_dir, "profile_report");
        return report;
    });
}

/// One-shot prune: loss profile -> kept mask -> criterion scores -> greedy
/// selection -> physical slicing -> pruned checkpoint plus reports.
inline RunReport run_prune(const ExperimentConfig& cfg, const std::string& ckpt_path) {
    std::filesystem::create_directories(cfg.out_dir);
    Checkpoint ckpt = Checkpoint::load(ckpt_path);
    NoiseSchedule sched = schedule_from_checkpoint(ckpt);
    Tensor<float> data = load_or_generate_dataset(cfg);

    PruneConfig pc = cfg.prune;
    pc.grad_batch = cfg.resolved_grad_batch();
    pc.seed = seed_stream(cfg.seed, seeds::score);
    pc.validate();

    return with_checkpoint_model(ckpt, [&](auto& model) {
        RunReport report;
        Shape in_shape = model_input_shape(cfg.model.family);
        int64_t params_before = param_count(model);
        int64_t macs_before = model.macs_per_sample(in_shape);

        auto groups = build_groups(model.prunable_spec());
        ImportanceScore scores;
        int64_t gradient_steps = 0;
        {
            StageTimer timer(report, "score");
            switch (pc.criterion) {
                case Criterion::random:
                    scores = score_random(model, groups, pc.seed);
                    break;
                case Criterion::magnitude:
                    scores = score_magnitude(model, groups);
                    break;
                case Criterion::taylor: {
                    LossProfile profile = estimate_loss_profile(model, data, sched, pc.profile_draws,
                                                                seed_stream(cfg.seed, seeds::profile));
                    write_profile_csv(cfg.out_dir + "/profile.csv", profile);
                    int64_t t_single = pc.taylor_step;
                    if (t_single <= 0) {
                        t_single = 1;
                        for (int64_t t = 2; t <= profile.T(); ++t)
                            if (profile.at(t) > profile.at(t_single)) t_single = t;
                    }
                    scores = score_taylor(model, groups, data, t_single, sched, pc);
                    gradient_steps = 1;
                    break;
                }
                case Criterion::diff_pruning: {
                    LossProfile profile = estimate_loss_profile(model, data, sched, pc.profile_draws,
                                                                seed_stream(cfg.seed, seeds::profile));
                    write_profile_csv(cfg.out_dir + "/profile.csv", profile);
                    scores = score_diff_pruning(model, groups, data, sched, profile, pc);
                    gradient_steps = static_cast<int64_t>(scores.gradient_steps.size());
                    break;
                }
            }
        }

        std::vector<int64_t> removed;
        {
            StageTimer timer(report, "select+slice");
            removed = select_groups(scores, model, groups, pc.target, in_shape);
        }
        auto sliced = slice_model(model, groups, removed);
        make_checkpoint(sliced, sched, 0, "").save(cfg.out_dir + "/pruned.dpck");
        std::ofstream(cfg.out_dir + "/scores.csv") << scores_csv(scores, groups, removed);
        std::ofstream(cfg.out_dir + "/groups.txt") << group_report(groups);

        int64_t params_after = param_count(sliced);
        int64_t macs_after = sliced.macs_per_sample(in_shape);
        report.set("command", "prune");
        report.set("criterion", criterion_name(pc.criterion));
        report.set("target_kind", pc.target.kind == PruneTarget::Kind::param_ratio ? "param_ratio" : "macs_ratio");
        report.set("target_value", pc.target.value);
        report.set("threshold", pc.threshold);
        report.set("params_before", params_before);
        report.set("params_after", params_after);
        report.set("param_reduction", 1.0 - static_cast<double>(params_after) / static_cast<double>(params_before));
        report.set("macs_before", macs_before);
        report.set("macs_after", macs_after);
        report.set("macs_reduction", 1.0 - static_cast<double>(macs_after) / static_cast<double>(macs_before));
        report.set("groups_total", static_cast<int64_t>(groups.size()));
        report.set("groups_removed", static_cast<int64_t>(removed.size()));
        report.set("gradient_steps", gradient_steps);
        report.set("checkpoint", cfg.out_dir + "/pruned.dpck");
        report.write(cfg.out_dir, "prune_report");
        return report;
    });
}

/// Finetunes a pruned checkpoint with the training loop; scratch_init = true
/// re-initializes the weights first (the scratch-training baseline).
inline RunReport run_finetune(const ExperimentConfig& cfg, const std::string& ckpt_path,
                              bool scratch_init = false) {
    std::filesystem::create_directories(cfg.out_dir);
    Checkpoint ckpt = Checkpoint::load(ckpt_path);
    NoiseSchedule sched = schedule_from_checkpoint(ckpt);
    Tensor<float> data = load_or_generate_dataset(cfg);
    const char* command = scratch_init ? "scratch" : "finetune";
    std::string out_ckpt = cfg.out_dir + (scratch_init ? "/scratch.dpck" : "/finetuned.dpck");

    return with_checkpoint_model(ckpt, [&](auto& model) {
        if (scratch_init) {
            Rng init_rng(seed_stream(cfg.seed, seeds::scratch));
            auto fresh = std::remove_reference_t<decltype(model)>::create_like(model, init_rng);
            model = fresh;
        }
        int64_t step0 = ckpt.meta.at("train_step").get<int64_t>();
        Rng rng(seed_stream(cfg.seed, seeds::finetune));
        std::string saved_state = ckpt.meta.at("rng_state").get<std::string>();
        if (!saved_state.empty() && !scratch_init && step0 > 0) rng.set_state(saved_state);
        if (scratch_init) step0 = 0;

        auto opt = Adam<float>::attach(model.named_params(), cfg.optimizer.lr);
        if (!scratch_init) load_adam_state(opt, ckpt);
        RunReport r = detail::train_impl(cfg, model, step0, rng, opt, sched, data, command,
                                         std::max(step0, cfg.finetune_steps), out_ckpt);
        r.set("finetune_budget", cfg.finetune_steps);
        r.write(cfg.out_dir, scratch_init ? "scratch_report" : "finetune_report");
        return r;
    });
}

// ---------------------------------------------------------------------------
// evaluation, sampling, sweeps
// ---------------------------------------------------------------------------

template <class M>
Tensor<float> sample_batch(M& model, const NoiseSchedule& sched, int64_t n, int64_t ddim_steps,
                           uint64_t seed) {
    Rng rng(seed);
    Tensor<float> x_T = normal_like<float>(model.sample_shape(n), rng);
    return ddim_sample(model, x_T, sched, std::min<int64_t>(ddim_steps, sched.T)).x0;
}

/// Same-seed consistency between teacher and student plus 2-D distribution
/// distances against the dataset. Identical seeds feed identical noise.
inline RunReport run_evaluate(const ExperimentConfig& cfg, const std::string& teacher_path,
                              const std::string& student_path) {
    std::filesystem::create_directories(cfg.out_dir);
    Checkpoint tc = Checkpoint::load(teacher_path);
    Checkpoint sc = Checkpoint::load(student_path);
    if (checkpoint_family(tc) != checkpoint_family(sc))
        throw std::runtime_error("evaluate: teacher and student families differ");
    NoiseSchedule sched = schedule_from_checkpoint(tc);
    NoiseSchedule sched_s = schedule_from_checkpoint(sc);
    if (sched.T != sched_s.T) throw std::runtime_error("evaluate: schedule mismatch between checkpoints");

    SamplerKind sampler = cfg.eval.sampler == "ddpm" ? SamplerKind::ddpm : SamplerKind::ddim;
    int64_t steps = std::min<int64_t>(cfg.eval.steps, sched.T);
    Shape in_shape = model_input_shape(checkpoint_family(tc));

    return with_checkpoint_model(tc, [&](auto& teacher) {
        using ModelT = std::remove_reference_t<decltype(teacher)>;
        ModelT student = [&] {
            if constexpr (std::is_same_v<ModelT, MlpDenoiser<float>>) return mlp_from_checkpoint(sc);
            else return unet_from_checkpoint(sc);
        }();

        RunReport report;
        ConsistencyReport consistency;
        {
            StageTimer timer(report, "consistency");
            consistency = consistency_eval(teacher, student, sched, cfg.eval.n_seeds, sampler, steps,
                                           cfg.eval.n_per_seed, seed_stream(cfg.seed, seeds::eval));
        }
        {
            std::ofstream os(cfg.out_dir + "/consistency.csv");
            os << "seed,similarity\n";
            for (size_t i = 0; i < consistency.values.size(); ++i)
                os << i << "," << fmt_g(consistency.values[i]) << "\n";
        }

        report.set("command", "eval");
        report.set("family", checkpoint_family(tc));
        report.set("sampler", cfg.eval.sampler);
        report.set("sample_steps", steps);
        report.set("teacher_params", param_count(teacher));
        report.set("teacher_macs", teacher.macs_per_sample(in_shape));
        report.set("student_params", param_count(student));
        report.set("student_macs", student.macs_per_sample(in_shape));
        report.set("n_seeds", cfg.eval.n_seeds);
        report.set("consistency_mean", consistency.mean);
        report.set("consistency_std", consistency.stddev);

        if constexpr (std::is_same_v<ModelT, MlpDenoiser<float>>) {
            StageTimer timer(report, "mmd");
            Tensor<float> data = load_or_generate_dataset(cfg);
            Rng ref_rng(seed_stream(cfg.seed, seeds::eval, 2));
            std::vector<int64_t> idx(static_cast<size_t>(std::min<int64_t>(cfg.eval.n_samples, data.dim(0))));
            for (auto& i : idx) i = ref_rng.uniform_int(0, data.dim(0) - 1);
            Tensor<float> reference = take_rows(data, idx);
            Tensor<float> student_samples =
                sample_batch(student, sched, cfg.eval.n_samples, steps, seed_stream(cfg.seed, seeds::eval, 3));
            Tensor<float> teacher_samples =
                sample_batch(teacher, sched, cfg.eval.n_samples, steps, seed_stream(cfg.seed, seeds::eval, 3));
            report.set("mmd_student_data", mmd_2d(student_samples, reference));
            report.set("mmd_teacher_data", mmd_2d(teacher_samples, reference));
        }
        report.write(cfg.out_dir, "eval_report");
        return report;
    });
}

inline RunReport run_sample(const ExperimentConfig& cfg, const std::string& ckpt_path, int64_t n) {
    std::filesystem::create_directories(cfg.out_dir);
    Checkpoint ckpt = Checkpoint::load(ckpt_path);
    NoiseSchedule sched = schedule_from_checkpoint(ckpt);
    return with_checkpoint_model(ckpt, [&](auto& model) {
        RunReport report;
        Tensor<float> samples;
        {
            StageTimer timer(report, "sample");
            samples = sample_batch(model, sched, n, cfg.eval.steps, seed_stream(cfg.seed, seeds::sample));
        }
        std::string out;
        if (samples.ndim() == 4) {
            out = cfg.out_dir + "/samples.pgm";
            write_pgm_grid(out, samples);
        } else {
            out = cfg.out_dir + "/samples.csv";
            std::ofstream os(out);
            os << "x,y\n";
            for (int64_t i = 0; i < samples.dim(0); ++i)
                os << fmt_g(samples[i * 2]) << "," << fmt_g(samples[i * 2 + 1]) << "\n";
        }
        report.set("command", "sample");
        report.set("n", n);
        report.set("sampler_steps", std::min<int64_t>(cfg.eval.steps, sched.T));
        report.set("output", out);
        report.write(cfg.out_dir, "sample_report");
        return report;
    });
}

/// Runs prune (+ optional finetune) + evaluate per sweep value; one CSV row
/// per run. Failures are recorded in the row and the sweep continues.
inline std::string run_sweep(const ExperimentConfig& cfg, const std::string& teacher_ckpt) {
    if (cfg.sweep.axis != "threshold" && cfg.sweep.axis != "ratio" && cfg.sweep.axis != "criterion")
        throw std::invalid_argument("sweep: axis must be threshold, ratio, or criterion");
    std::filesystem::create_directories(cfg.out_dir);

    struct Item {
        std::string label;
        ExperimentConfig cfg;
    };
    std::vector<Item> items;
    if (cfg.sweep.axis == "criterion") {
        std::vector<std::string> names = cfg.sweep.criteria;
        if (names.empty()) names = {"random", "magnitude", "taylor", "diff_pruning"};
        for (const auto& name : names) {
            ExperimentConfig sub = cfg;
            sub.prune.criterion = criterion_from_name(name);
            sub.out_dir = cfg.out_dir + "/criterion_" + name;
            items.push_back({name, sub});
        }
    } else {
        if (cfg.sweep.values.empty()) throw std::invalid_argument("sweep: no values configured");
        for (double v : cfg.sweep.values) {
            ExperimentConfig sub = cfg;
            std::string label = fmt_g(v);
            if (cfg.sweep.axis == "threshold") sub.prune.threshold = v;
            else sub.prune.target.value = v;
            sub.out_dir = cfg.out_dir + "/" + cfg.sweep.axis + "_" + label;
            items.push_back({label, sub});
        }
    }

    std::ostringstream csv;
    csv << "axis,value,kept_steps,params_after,macs_after,consistency_mean,consistency_std,status\n";
    for (auto& item : items) {
        try {
            std::filesystem::create_directories(item.cfg.out_dir);
            RunReport prune_report = run_prune(item.cfg, teacher_ckpt);
            std::string student = item.cfg.out_dir + "/pruned.dpck";
            if (item.cfg.finetune_steps > 0) {
                run_finetune(item.cfg, student);
                student = item.cfg.out_dir + "/finetuned.dpck";
            }
            RunReport eval_report = run_evaluate(item.cfg, teacher_ckpt, student);
            csv << cfg.sweep.axis << "," << item.label << "," << prune_report.get("gradient_steps") << ","
                << prune_report.get("params_after") << "," << prune_report.get("macs_after") << ","
                << eval_report.get("consistency_mean") << "," << eval_report.get("consistency_std")
                << ",ok\n";
        } catch (const std::exception& e) {
            std::string msg = e.what();
            for (auto& ch : msg)
                if (ch == ',' || ch == '\n') ch = ';';
            csv << cfg.sweep.axis << "," << item.label << ",,,,,,error: " << msg << "\n";
        }
    }
    std::string out = csv.str();
    std::ofstream(cfg.out_dir + "/sweep.csv") << out;
    return out;
}

}  // namespace diffprune
