#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "diffprune/pipeline.hpp"

using namespace diffprune;

namespace {

std::string work_root() {
    auto p = std::filesystem::temp_directory_path() / "diffprune_trained_fixture";
    std::filesystem::create_directories(p);
    return p.string();
}

ExperimentConfig mlp_config() {
    ExperimentConfig cfg;
    cfg.dataset.kind = DatasetKind::gauss8;
    cfg.dataset.n = 4096;
    cfg.model.family = "mlp";
    cfg.model.hidden = {32, 32, 32};
    cfg.model.time_dim = 16;
    cfg.schedule = {50, 1e-3, 0.12};
    cfg.optimizer = {2e-3, 1500, 128, 0};
    cfg.prune.criterion = Criterion::diff_pruning;
    cfg.prune.target = {PruneTarget::Kind::param_ratio, 0.30};
    cfg.prune.profile_draws = 64;
    cfg.prune.grad_batch = 128;
    cfg.finetune_steps = 300;
    cfg.eval = {"ddim", 50, 6, 32, 400};
    cfg.seed = 5;
    cfg.out_dir = work_root() + "/mlp";
    return cfg;
}

ExperimentConfig unet_config() {
    ExperimentConfig cfg;
    cfg.dataset.kind = DatasetKind::shapes16;
    cfg.dataset.n = 512;
    cfg.model.family = "unet";
    cfg.model.channels = {8, 16};
    cfg.model.time_dim = 16;
    cfg.schedule = {50, 1e-3, 0.12};
    cfg.optimizer = {1e-3, 1500, 8, 0};
    cfg.prune.criterion = Criterion::diff_pruning;
    cfg.prune.target = {PruneTarget::Kind::macs_ratio, 0.05};
    cfg.prune.profile_draws = 16;
    cfg.prune.grad_batch = 16;
    cfg.finetune_steps = 0;
    cfg.eval = {"ddim", 25, 16, 4, 200};
    cfg.seed = 8;
    cfg.out_dir = work_root() + "/unet";
    return cfg;
}

// Trains each teacher once per test binary run.
const std::string& mlp_teacher() {
    static std::string path = [] {
        auto cfg = mlp_config();
        run_train(cfg);
        return cfg.out_dir + "/ckpt_final.dpck";
    }();
    return path;
}

const std::string& unet_teacher() {
    static std::string path = [] {
        auto cfg = unet_config();
        run_train(cfg);
        return cfg.out_dir + "/ckpt_final.dpck";
    }();
    return path;
}

std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
    std::vector<std::vector<std::string>> rows;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        std::vector<std::string> cells;
        std::istringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        rows.push_back(std::move(cells));
    }
    return rows;
}

}  // namespace

TEST_CASE("trained mlp: loss profile trends down toward the noisy end") {
    auto cfg = mlp_config();
    auto ckpt = Checkpoint::load(mlp_teacher());
    auto model = mlp_from_checkpoint(ckpt);
    auto sched = schedule_from_checkpoint(ckpt);
    auto data = load_or_generate_dataset(cfg);

    auto profile = estimate_loss_profile(model, data, sched, 128, 99);
    REQUIRE(profile.T() == 50);
    double head = 0, tail = 0;
    for (int64_t t = 1; t <= 12; ++t) head += profile.at(t);
    for (int64_t t = 39; t <= 50; ++t) tail += profile.at(t);
    CHECK(tail / 12.0 < head / 12.0);
    CHECK(profile.l_max() > 0.0);

    // thresholding on the real profile: grid of kept counts is nonincreasing
    int64_t prev = sched.T + 1;
    for (double th : {0.0, 0.01, 0.02, 0.05, 0.1}) {
        int64_t k = threshold_timesteps(profile, th).kept_count();
        CHECK(k <= prev);
        prev = k;
    }
}

TEST_CASE("trained mlp: finetuning recovers validation loss lost to pruning") {
    auto cfg = mlp_config();
    run_prune(cfg, mlp_teacher());
    auto data = load_or_generate_dataset(cfg);
    auto sched = schedule_from_checkpoint(Checkpoint::load(mlp_teacher()));

    auto pruned = mlp_from_checkpoint(Checkpoint::load(cfg.out_dir + "/pruned.dpck"));
    double loss_pruned = validation_loss(pruned, data, sched, 2048, 1234);

    run_finetune(cfg, cfg.out_dir + "/pruned.dpck");
    auto tuned = mlp_from_checkpoint(Checkpoint::load(cfg.out_dir + "/finetuned.dpck"));
    double loss_tuned = validation_loss(tuned, data, sched, 2048, 1234);
    CHECK(loss_tuned < loss_pruned);
}

TEST_CASE("trained unet: lightly pruned diff_pruning model tracks the teacher more closely than magnitude") {
    auto cfg = unet_config();
    auto teacher_path = unet_teacher();

    auto dp_cfg = cfg;
    dp_cfg.out_dir = cfg.out_dir + "/dp";
    dp_cfg.prune.criterion = Criterion::diff_pruning;
    run_prune(dp_cfg, teacher_path);
    auto dp_eval = run_evaluate(dp_cfg, teacher_path, dp_cfg.out_dir + "/pruned.dpck");

    auto mag_cfg = cfg;
    mag_cfg.out_dir = cfg.out_dir + "/mag";
    mag_cfg.prune.criterion = Criterion::magnitude;
    run_prune(mag_cfg, teacher_path);
    auto mag_eval = run_evaluate(mag_cfg, teacher_path, mag_cfg.out_dir + "/pruned.dpck");

    CHECK(dp_eval.get_num("consistency_mean") >= mag_eval.get_num("consistency_mean"));
    CHECK(dp_eval.get_num("consistency_mean") > 0.0);
}

TEST_CASE("sweep: threshold grid reports nonincreasing kept counts") {
    auto cfg = mlp_config();
    cfg.out_dir = work_root() + "/mlp_sweep_threshold";
    cfg.sweep.axis = "threshold";
    cfg.sweep.values = {0.0, 0.02, 0.05, 0.1};
    cfg.finetune_steps = 40;
    cfg.eval.n_seeds = 3;
    cfg.eval.n_per_seed = 16;

    auto csv = run_sweep(cfg, mlp_teacher());
    auto rows = parse_csv(csv);
    REQUIRE(rows.size() == 5);  // header + 4 values
    int64_t prev = 1000000;
    for (size_t r = 1; r < rows.size(); ++r) {
        CHECK(rows[r].back() == "ok");
        int64_t kept = std::stoll(rows[r][2]);
        CHECK(kept <= prev);
        prev = kept;
    }
}

TEST_CASE("sweep: ratio grid reports strictly decreasing parameter counts") {
    auto cfg = mlp_config();
    cfg.out_dir = work_root() + "/mlp_sweep_ratio";
    cfg.sweep.axis = "ratio";
    cfg.sweep.values = {0.15, 0.3, 0.45};
    cfg.finetune_steps = 0;
    cfg.eval.n_seeds = 2;
    cfg.eval.n_per_seed = 8;

    auto csv = run_sweep(cfg, mlp_teacher());
    auto rows = parse_csv(csv);
    REQUIRE(rows.size() == 4);
    int64_t prev = 1000000000;
    for (size_t r = 1; r < rows.size(); ++r) {
        CHECK(rows[r].back() == "ok");
        int64_t params = std::stoll(rows[r][3]);
        CHECK(params < prev);
        prev = params;
    }
}

TEST_CASE("sweep: criterion grid covers all four criteria and records failures without stopping") {
    auto cfg = mlp_config();
    cfg.out_dir = work_root() + "/mlp_sweep_criterion";
    cfg.sweep.axis = "criterion";
    cfg.finetune_steps = 0;
    cfg.eval.n_seeds = 2;
    cfg.eval.n_per_seed = 8;

    auto csv = run_sweep(cfg, mlp_teacher());
    auto rows = parse_csv(csv);
    REQUIRE(rows.size() == 5);
    CHECK(rows[1][1] == "random");
    CHECK(rows[2][1] == "magnitude");
    CHECK(rows[3][1] == "taylor");
    CHECK(rows[4][1] == "diff_pruning");
    for (size_t r = 1; r < rows.size(); ++r) CHECK(rows[r].back() == "ok");

    // a sweep value that cannot run is recorded as an error row, and the
    // sweep continues past it
    auto bad = cfg;
    bad.out_dir = work_root() + "/mlp_sweep_bad";
    bad.sweep.axis = "threshold";
    bad.sweep.values = {5.0, 0.05};  // 5.0 keeps no timesteps
    bad.prune.criterion = Criterion::diff_pruning;
    auto bad_csv = run_sweep(bad, mlp_teacher());
    auto bad_rows = parse_csv(bad_csv);
    REQUIRE(bad_rows.size() == 3);
    CHECK(bad_rows[1].back().find("error") == 0);
    CHECK(bad_rows[2].back() == "ok");
}

TEST_CASE("fixture cleanup") {
    std::filesystem::remove_all(work_root());
    CHECK(true);
}
