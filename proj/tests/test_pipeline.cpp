#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "diffprune/pipeline.hpp"

using namespace diffprune;

namespace {

struct WorkDir {
    std::filesystem::path path;
    explicit WorkDir(const char* name) : path(std::filesystem::temp_directory_path() / name) {
        std::filesystem::remove_all(path);
        std::filesystem::create_directories(path);
    }
    ~WorkDir() { std::filesystem::remove_all(path); }
    std::string str() const { return path.string(); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

ExperimentConfig tiny_mlp_config(const std::string& out_dir, uint64_t seed = 1) {
    ExperimentConfig cfg;
    cfg.dataset.kind = DatasetKind::gauss8;
    cfg.dataset.n = 1024;
    cfg.model.family = "mlp";
    cfg.model.hidden = {16, 16, 16};
    cfg.model.time_dim = 8;
    cfg.schedule = {20, 1e-3, 0.05};
    cfg.optimizer = {2e-3, 300, 64, 0};
    cfg.prune.criterion = Criterion::random;
    cfg.prune.target = {PruneTarget::Kind::param_ratio, 0.2};
    cfg.prune.profile_draws = 32;
    cfg.prune.grad_batch = 64;
    cfg.finetune_steps = 50;
    cfg.eval = {"ddim", 20, 4, 16, 200};
    cfg.seed = seed;
    cfg.out_dir = out_dir;
    return cfg;
}

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    REQUIRE(f.good());
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("config json: defaults, round-trip, and strict key checking") {
    auto cfg = ExperimentConfig::from_json(nlohmann::json::object());
    CHECK(cfg.schedule.T == 1000);
    CHECK(cfg.schedule.beta_start == doctest::Approx(1e-4));
    CHECK(cfg.prune.threshold == doctest::Approx(0.05));
    CHECK(cfg.model.family == "mlp");
    CHECK(cfg.resolved_grad_batch() == 256);
    cfg.model.family = "unet";
    CHECK(cfg.resolved_grad_batch() == 64);

    auto full = tiny_mlp_config("x");
    auto round = ExperimentConfig::from_json(full.to_json());
    CHECK(round.to_json() == full.to_json());

    CHECK_THROWS(ExperimentConfig::from_json({{"optimzer", {{"lr", 1e-3}}}}));
    CHECK_THROWS(ExperimentConfig::from_json({{"optimizer", {{"lr", 1e-3}, {"typo", 2}}}}));
    CHECK_THROWS(ExperimentConfig::from_json({{"model", {{"family", "cnn"}}}}));
    CHECK_THROWS(ExperimentConfig::from_json({{"prune", {{"target_value", 1.5}}}}));
}

TEST_CASE("gen-data writes the dataset deterministically") {
    WorkDir dir("dp_gen_test");
    auto cfg = tiny_mlp_config(dir.str());
    write_dataset(cfg);
    auto bytes1 = slurp(dir.file("dataset.dtns"));
    write_dataset(cfg);
    CHECK(slurp(dir.file("dataset.dtns")) == bytes1);

    // load_or_generate without the file produces the same tensor
    std::filesystem::remove(dir.file("dataset.dtns"));
    auto generated = load_or_generate_dataset(cfg);
    write_dataset(cfg);
    auto loaded = load_or_generate_dataset(cfg);
    CHECK(max_abs_diff(generated, loaded) == 0.0f);
}

TEST_CASE("training runs, logs a decreasing loss, and is reproducible") {
    WorkDir dir("dp_train_test");
    auto cfg = tiny_mlp_config(dir.str());
    auto report = run_train(cfg);
    CHECK(report.get("command") == "train");
    CHECK(report.get_num("final_loss") > 0.0);
    CHECK(std::filesystem::exists(dir.file("ckpt_final.dpck")));

    // loss trend: late window below early window
    std::ifstream log(dir.file("loss_log.csv"));
    std::string line;
    std::getline(log, line);  // header
    std::vector<double> losses;
    while (std::getline(log, line)) losses.push_back(std::stod(line.substr(line.find(',') + 1)));
    REQUIRE(losses.size() >= 6);
    double early = (losses[0] + losses[1]) / 2.0;
    double late = (losses[losses.size() - 1] + losses[losses.size() - 2]) / 2.0;
    CHECK(late < early);

    auto bytes1 = slurp(dir.file("ckpt_final.dpck"));
    auto report2 = run_train(cfg);
    CHECK(slurp(dir.file("ckpt_final.dpck")) == bytes1);  // bit-identical rerun
    CHECK(report2.csv() == report.csv());
}

TEST_CASE("periodic checkpoints are written at the configured cadence") {
    WorkDir dir("dp_save_every");
    auto cfg = tiny_mlp_config(dir.str());
    cfg.optimizer.steps = 250;
    cfg.optimizer.save_every = 100;
    run_train(cfg);
    CHECK(std::filesystem::exists(dir.file("ckpt_100.dpck")));
    CHECK(std::filesystem::exists(dir.file("ckpt_200.dpck")));
    CHECK(std::filesystem::exists(dir.file("ckpt_final.dpck")));
    auto mid = Checkpoint::load(dir.file("ckpt_200.dpck"));
    CHECK(mid.meta.at("train_step").get<int64_t>() == 200);
}

TEST_CASE("resuming a checkpoint continues the exact training trajectory") {
    WorkDir dir_a("dp_resume_a"), dir_b("dp_resume_b");
    auto full = tiny_mlp_config(dir_a.str());
    full.optimizer.steps = 200;
    run_train(full);
    auto full_bytes = slurp(dir_a.file("ckpt_final.dpck"));

    auto half = tiny_mlp_config(dir_b.str());
    half.optimizer.steps = 120;
    run_train(half);
    std::filesystem::copy_file(dir_b.file("ckpt_final.dpck"), dir_b.file("half.dpck"));
    auto resumed = tiny_mlp_config(dir_b.str());
    resumed.optimizer.steps = 200;
    run_train(resumed, dir_b.file("half.dpck"));
    CHECK(slurp(dir_b.file("ckpt_final.dpck")) == full_bytes);
}

TEST_CASE("overfit oracle: a single fixed triple trains below 1e-4") {
    Rng rng(11);
    auto m = MlpDenoiser<float>::create({16, 16}, 8, rng);
    auto sched = make_linear_schedule(20, 1e-3, 0.05);
    auto opt = Adam<float>::attach(m.named_params(), 1e-2);

    Rng dr(12);
    Tensor<float> x0 = normal_like<float>({1, 2}, dr);
    Tensor<float> eps = normal_like<float>({1, 2}, dr);
    const int64_t t = 7;
    double loss_val = 1.0;
    for (int step = 0; step < 800 && loss_val > 5e-5; ++step) {
        opt.zero_grad();
        Tape<float> tape;
        auto loss = timestep_loss(tape, m, x0, t, eps, sched);
        loss_val = loss.item();
        tape.backward(loss);
        opt.step();
    }
    CHECK(loss_val < 1e-4);
}

TEST_CASE("prune: near-zero target leaves the model unchanged; pruned checkpoint samples") {
    WorkDir dir("dp_prune_test");
    auto cfg = tiny_mlp_config(dir.str());
    cfg.optimizer.steps = 100;
    run_train(cfg);

    // near-zero removal target: closest greedy state is the empty set
    auto cfg0 = cfg;
    cfg0.prune.target.value = 1e-9;
    auto r0 = run_prune(cfg0, dir.file("ckpt_final.dpck"));
    CHECK(r0.get("params_before") == r0.get("params_after"));
    CHECK(r0.get_num("groups_removed") == 0);

    auto cfg_real = cfg;
    cfg_real.prune.criterion = Criterion::diff_pruning;
    cfg_real.prune.target.value = 0.25;
    auto r1 = run_prune(cfg_real, dir.file("ckpt_final.dpck"));
    CHECK(r1.get_num("params_after") < r1.get_num("params_before"));
    CHECK(std::filesystem::exists(dir.file("scores.csv")));
    CHECK(std::filesystem::exists(dir.file("groups.txt")));
    CHECK(std::filesystem::exists(dir.file("profile.csv")));

    // reload and sample without error
    auto sample_report = run_sample(cfg_real, dir.file("pruned.dpck"), 16);
    CHECK(std::filesystem::exists(dir.file("samples.csv")));

    // reports and artifacts reproduce bit-identically
    auto scores1 = slurp(dir.file("scores.csv"));
    auto r2 = run_prune(cfg_real, dir.file("ckpt_final.dpck"));
    CHECK(r2.csv() == r1.csv());
    CHECK(slurp(dir.file("scores.csv")) == scores1);
}

TEST_CASE("finetune: zero budget is a no-op; budget is recorded") {
    WorkDir dir("dp_ft_test");
    auto cfg = tiny_mlp_config(dir.str());
    cfg.optimizer.steps = 100;
    run_train(cfg);
    run_prune(cfg, dir.file("ckpt_final.dpck"));
    auto pruned_bytes_model = Checkpoint::load(dir.file("pruned.dpck"));

    auto cfg0 = cfg;
    cfg0.finetune_steps = 0;
    auto r = run_finetune(cfg0, dir.file("pruned.dpck"));
    CHECK(r.get("finetune_budget") == "0");
    CHECK(r.get("steps") == "0");
    auto after = Checkpoint::load(dir.file("finetuned.dpck"));
    for (const auto& [name, t] : pruned_bytes_model.tensors) {
        if (name.rfind("adam.", 0) == 0) continue;
        CHECK(max_abs_diff(t, after.tensor(name)) == 0.0f);
    }

    auto cfg_ft = cfg;
    cfg_ft.finetune_steps = 40;
    auto r2 = run_finetune(cfg_ft, dir.file("pruned.dpck"));
    CHECK(r2.get("finetune_budget") == "40");
    CHECK(r2.get("steps") == "40");
}

TEST_CASE("evaluate: a model against itself scores perfect consistency and ~0 mmd") {
    WorkDir dir("dp_eval_test");
    auto cfg = tiny_mlp_config(dir.str());
    cfg.optimizer.steps = 150;
    run_train(cfg);

    auto report = run_evaluate(cfg, dir.file("ckpt_final.dpck"), dir.file("ckpt_final.dpck"));
    CHECK(report.get_num("consistency_mean") == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(report.get_num("consistency_std") == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(report.get_num("mmd_student_data") == doctest::Approx(report.get_num("mmd_teacher_data")).epsilon(1e-12));
    CHECK(report.get_num("teacher_params") == report.get_num("student_params"));
    CHECK(report.get_num("teacher_macs") > 0);
    CHECK(std::filesystem::exists(dir.file("consistency.csv")));

    // deterministic rerun
    auto report2 = run_evaluate(cfg, dir.file("ckpt_final.dpck"), dir.file("ckpt_final.dpck"));
    CHECK(report2.csv() == report.csv());
}

TEST_CASE("scratch finetune re-initializes weights before training") {
    WorkDir dir("dp_scratch_test");
    auto cfg = tiny_mlp_config(dir.str());
    cfg.optimizer.steps = 100;
    run_train(cfg);
    run_prune(cfg, dir.file("ckpt_final.dpck"));

    auto cfg0 = cfg;
    cfg0.finetune_steps = 0;
    run_finetune(cfg0, dir.file("pruned.dpck"), /*scratch_init=*/true);
    auto pruned = Checkpoint::load(dir.file("pruned.dpck"));
    auto scratch = Checkpoint::load(dir.file("scratch.dpck"));
    // same shapes, different values
    bool any_diff = false;
    for (const auto& [name, t] : pruned.tensors) {
        if (name.rfind("adam.", 0) == 0) continue;
        CHECK(t.shape() == scratch.tensor(name).shape());
        if (max_abs_diff(t, scratch.tensor(name)) > 0) any_diff = true;
    }
    CHECK(any_diff);
}
