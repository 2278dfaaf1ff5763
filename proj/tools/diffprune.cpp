// Copyright (c) 2026 the diffprune authors
// SPDX-License-Identifier: Apache-2.0

#include <cstdio>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "diffprune/pipeline.hpp"

namespace {

struct CommonArgs {
    std::string config_path;
    std::string out_dir;
    uint64_t seed = 0;
    bool seed_given = false;

    diffprune::ExperimentConfig load() const {
        diffprune::ExperimentConfig cfg = config_path.empty()
                                              ? diffprune::ExperimentConfig{}
                                              : diffprune::ExperimentConfig::from_file(config_path);
        if (seed_given) cfg.seed = seed;
        if (!out_dir.empty()) cfg.out_dir = out_dir;
        return cfg;
    }
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "JSON experiment config");
    cmd->add_option("--out", args.out_dir, "output directory (overrides config)");
    auto* seed_opt = cmd->add_option("--seed", args.seed, "experiment seed (overrides config)");
    cmd->callback([seed_opt, &args] { args.seed_given = seed_opt->count() > 0; });
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"small-diffusion training, structural pruning, and evaluation toolkit"};
    app.require_subcommand(1);

    CommonArgs args;
    std::string ckpt, teacher, student;
    int64_t n_samples = 64;
    bool scratch = false;

    auto* gen = app.add_subcommand("gen-data", "generate a dataset file");
    add_common(gen, args);

    auto* train = app.add_subcommand("train", "train a denoiser (optionally resuming a checkpoint)");
    add_common(train, args);
    train->add_option("--ckpt", ckpt, "checkpoint to resume from");

    auto* profile = app.add_subcommand("profile", "estimate the per-timestep loss profile");
    add_common(profile, args);
    profile->add_option("--ckpt", ckpt, "model checkpoint")->required();

    auto* prune = app.add_subcommand("prune", "one-shot structural pruning of a checkpoint");
    add_common(prune, args);
    prune->add_option("--ckpt", ckpt, "model checkpoint")->required();

    auto* finetune = app.add_subcommand("finetune", "finetune a pruned checkpoint");
    add_common(finetune, args);
    finetune->add_option("--ckpt", ckpt, "pruned checkpoint")->required();
    finetune->add_flag("--scratch", scratch, "re-initialize weights first (scratch-training baseline)");

    auto* sample = app.add_subcommand("sample", "generate samples from a checkpoint");
    add_common(sample, args);
    sample->add_option("--ckpt", ckpt, "model checkpoint")->required();
    sample->add_option("-n,--num", n_samples, "number of samples");

    auto* eval = app.add_subcommand("eval", "consistency and distribution metrics for teacher vs student");
    add_common(eval, args);
    eval->add_option("--teacher", teacher, "teacher checkpoint")->required();
    eval->add_option("--student", student, "student checkpoint")->required();

    auto* sweep = app.add_subcommand("sweep", "prune/finetune/eval across a threshold, ratio, or criterion grid");
    add_common(sweep, args);
    sweep->add_option("--ckpt", ckpt, "teacher checkpoint")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        diffprune::ExperimentConfig cfg = args.load();
        if (gen->parsed()) {
            std::cout << diffprune::write_dataset(cfg).text();
        } else if (train->parsed()) {
            std::cout << diffprune::run_train(cfg, ckpt).text();
        } else if (profile->parsed()) {
            std::cout << diffprune::run_profile(cfg, ckpt).text();
        } else if (prune->parsed()) {
            std::cout << diffprune::run_prune(cfg, ckpt).text();
        } else if (finetune->parsed()) {
            std::cout << diffprune::run_finetune(cfg, ckpt, scratch).text();
        } else if (sample->parsed()) {
            std::cout << diffprune::run_sample(cfg, ckpt, n_samples).text();
        } else if (eval->parsed()) {
            std::cout << diffprune::run_evaluate(cfg, teacher, student).text();
        } else if (sweep->parsed()) {
            std::cout << diffprune::run_sweep(cfg, ckpt);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
