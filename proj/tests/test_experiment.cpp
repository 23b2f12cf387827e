#include "biasless/config.hpp"
#include "biasless/errors.hpp"
#include "biasless/experiment.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

using namespace biasless;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("biasless-exp-" + name + "-" + std::to_string(std::random_device{}()));
    fs::remove_all(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::size_t line_count(const fs::path& p) {
    std::ifstream in(p);
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) ++n;
    return n;
}

struct SurrogateRig {
    std::vector<std::size_t> sizes = {450, 50};
    SearchSpace space;
    SurrogateTable table;
    SurrogateEvaluator evaluator;
    ExperimentConfig cfg;

    static SearchSpaceConfig space_config() {
        SearchSpaceConfig c;
        c.depth = 2;
        c.block_types = {BlockType::CB, BlockType::RB, BlockType::SKIP};
        c.channels = {8, 16};
        c.kernels = {3};
        c.ratio_grid = {ProportionalRatio{}, MinorityFraction{0.25}, MinorityFraction{0.5}};
        return c;
    }

    SurrogateRig() : space(space_config(), sizes), table(build_table(space, 1)), evaluator(table, {}) {
        cfg.reinforce.episode_batch = 3;
        cfg.controller_hidden = 8;
    }

    SearchResult run(std::size_t updates, const fs::path& dir, std::uint64_t seed = 5, bool resume = true) {
        cfg.updates = updates;
        cfg.resume = resume;
        return run_search(make_search_setup(cfg, space, evaluator, seed, dir));
    }
};

ExperimentConfig smoke_config() {
    ExperimentConfig cfg;
    apply_preset(cfg, "smoke");
    return cfg;
}

}  // namespace

TEST_CASE("a one-update training search writes its trace") {
    auto cfg = smoke_config();
    cfg.updates = 1;
    const auto data = prepare_data(cfg);
    const SearchSpace space(cfg.space, data.train.group_sizes());
    const TrainingEvaluator evaluator(data, cfg.train, cfg.fairness);
    const auto dir = scratch("smoke");
    const auto res = run_search(make_search_setup(cfg, space, evaluator, 0, dir));
    CHECK(res.rows.size() == cfg.reinforce.episode_batch);
    CHECK(line_count(dir / "trace.csv") == 1 + cfg.reinforce.episode_batch);
    CHECK(slurp(dir / "trace.csv").rfind(trace_header(2) + "\n", 0) == 0);
    for (const char* f : {"loss_trace.csv", "reports.jsonl", "timing.csv", "controller.bin", "best.json"})
        CHECK(fs::exists(dir / f));
    const auto back = read_trace(dir / "trace.csv");
    REQUIRE(back.size() == res.rows.size());
    for (std::size_t i = 0; i < back.size(); ++i) {
        CHECK(back[i].tokens == res.rows[i].tokens);
        CHECK(back[i].status == res.rows[i].status);
        CHECK(back[i].reward == res.rows[i].reward);
    }
    fs::remove_all(dir);
}

TEST_CASE("training searches are reproducible byte for byte") {
    auto cfg = smoke_config();
    cfg.updates = 2;
    const auto data = prepare_data(cfg);
    const SearchSpace space(cfg.space, data.train.group_sizes());
    const TrainingEvaluator evaluator(data, cfg.train, cfg.fairness);
    const auto a = scratch("det-a"), b = scratch("det-b");
    run_search(make_search_setup(cfg, space, evaluator, 3, a));
    cfg.workers = 2;
    run_search(make_search_setup(cfg, space, evaluator, 3, b));
    CHECK(slurp(a / "trace.csv") == slurp(b / "trace.csv"));
    CHECK(slurp(a / "loss_trace.csv") == slurp(b / "loss_trace.csv"));
    fs::remove_all(a);
    fs::remove_all(b);
}

TEST_CASE("surrogate search trace columns") {
    SurrogateRig rig;
    const auto dir = scratch("columns");
    const auto res = rig.run(4, dir);
    REQUIRE(res.rows.size() == 12);
    for (std::size_t i = 0; i < res.rows.size(); ++i) {
        const auto& r = res.rows[i];
        CHECK(r.iteration == i);
        CHECK(r.update == i / 3);
        CHECK(r.episode == i % 3);
        if (r.status == "ok") {
            REQUIRE(r.report);
            CHECK(r.reward == compute_reward(*r.report, rig.cfg.reward));
        } else {
            CHECK(r.status == "invalid");
            CHECK(r.reward == -1.0);
        }
    }
    REQUIRE(res.best);
    for (const auto& r : res.rows) CHECK(r.reward <= res.best->reward);
    fs::remove_all(dir);
}

TEST_CASE("resuming continues where the checkpoint left off") {
    SurrogateRig rig;
    const auto fresh = scratch("fresh"), resumed = scratch("resumed");
    rig.run(6, fresh);
    rig.run(3, resumed);
    // Rows written after the last checkpoint are dropped on resume.
    {
        std::ofstream(resumed / "trace.csv", std::ios::app) << "999,3,0,0 0 0 0 0 0 0 0 0,\"x\",1,ok\n";
    }
    rig.run(6, resumed);
    CHECK(slurp(fresh / "trace.csv") == slurp(resumed / "trace.csv"));
    const auto rows = read_trace(resumed / "trace.csv");
    CHECK(rows.size() == 18);
    std::set<std::size_t> its;
    for (const auto& r : rows) its.insert(r.iteration);
    CHECK(its.size() == 18);
    CHECK(ControllerPolicy::load(resumed / "controller.bin", rig.space.schema()).update_count() == 6);

    const auto restart = rig.run(2, resumed, 5, false);
    CHECK(restart.rows.size() == 6);
    CHECK(read_trace(resumed / "trace.csv").size() == 6);
    fs::remove_all(fresh);
    fs::remove_all(resumed);
}

TEST_CASE("plot data copies the trace") {
    SurrogateRig rig;
    const auto dir = scratch("plots");
    const auto res = rig.run(3, dir);
    const auto files = emit_plot_data(dir / "trace.csv", dir / "plots");
    std::size_t with_report = 0;
    for (const auto& r : res.rows) with_report += r.report.has_value();
    CHECK(line_count(files.scatter) == 1 + with_report);
    CHECK(line_count(files.reward_curve) == 1 + res.rows.size());
    std::ifstream in(files.reward_curve);
    std::string line;
    std::getline(in, line);
    double best = -1e9;
    for (const auto& r : res.rows) {
        std::getline(in, line);
        best = std::max(best, r.reward);
        const auto fields = [&] {
            std::vector<std::string> v;
            std::stringstream ss(line);
            std::string f;
            while (std::getline(ss, f, ',')) v.push_back(f);
            return v;
        }();
        REQUIRE(fields.size() == 4);
        CHECK(std::stoul(fields[0]) == r.iteration);
        CHECK(fields[1] == format_double(r.reward));
        CHECK(fields[2] == format_double(best));
    }
    fs::remove_all(dir);
}

TEST_CASE("child seeds depend on the search seed and the point only") {
    CHECK(child_seed(1, "a") == child_seed(1, "a"));
    CHECK(child_seed(1, "a") != child_seed(1, "b"));
    CHECK(child_seed(1, "a") != child_seed(2, "a"));
}

TEST_CASE("ratio text resolution") {
    const std::vector<std::size_t> sizes = {900, 100};
    CHECK(resolve_bgm("balanced", sizes).ratios() == std::vector<double>{0.5, 0.5});
    CHECK(resolve_bgm("proportional", sizes).ratios() == std::vector<double>{0.9, 0.1});
    CHECK(resolve_bgm("0.25", sizes).ratios() == std::vector<double>{0.75, 0.25});
    CHECK(resolve_bgm("0.75/0.25", sizes).ratios() == std::vector<double>{0.75, 0.25});
    const std::vector<std::size_t> flipped = {100, 900};
    CHECK_THROWS_AS(resolve_bgm("0.75/0.25", flipped), ConstraintError);
}

TEST_CASE("yaml overlay") {
    ExperimentConfig cfg;
    apply_yaml_text(cfg, "updates: 7\nspace:\n  depth: 3\n  ratio_grid: [proportional, 0.5]\nreward:\n  alpha: 0.5\n  beta: 0.5\n");
    CHECK(cfg.updates == 7);
    CHECK(cfg.space.depth == 3);
    CHECK(cfg.space.ratio_grid.size() == 2);
    CHECK(cfg.reward.alpha == 0.5);
    CHECK_THROWS_AS(apply_yaml_text(cfg, "updatez: 3\n"), ConfigError);
    CHECK_THROWS_AS(apply_yaml_text(cfg, "space:\n  width: 3\n"), ConfigError);
    CHECK_THROWS_AS(apply_yaml_text(cfg, "updates: many\n"), ConfigError);

    ExperimentConfig again;
    apply_yaml_text(again, to_yaml(cfg));
    CHECK(to_yaml(again) == to_yaml(cfg));
    CHECK_THROWS_AS(apply_yaml_file(cfg, "/nonexistent/config.yaml"), IoError);
}

TEST_CASE("presets") {
    for (const auto& name : preset_names()) {
        ExperimentConfig cfg;
        CHECK_NOTHROW(apply_preset(cfg, name));
        CHECK_NOTHROW(cfg.validate());
    }
    ExperimentConfig fair, acc;
    apply_preset(fair, "fair");
    apply_preset(acc, "acc");
    CHECK(fair.reward.alpha == 0.2);
    CHECK(fair.reward.beta == 0.8);
    CHECK(acc.reward.alpha == 0.8);
    CHECK(acc.reward.beta == 0.2);
    ExperimentConfig cfg;
    CHECK_THROWS_AS(apply_preset(cfg, "turbo"), ConfigError);
}

TEST_CASE("arm ranking") {
    auto arm = [](Arm a, double acc, double u) {
        ArmSummary s;
        s.arm = a;
        s.median_accuracy = acc;
        s.median_unfairness = u;
        return s;
    };
    std::vector<ArmSummary> arms = {arm(Arm::Vanilla, 0.80, 0.30), arm(Arm::FairLossOnly, 0.78, 0.20),
                                    arm(Arm::BalancedFairLoss, 0.76, 0.15), arm(Arm::SearchOnly, 0.82, 0.25),
                                    arm(Arm::Full, 0.81, 0.10)};
    rank_arms(arms);
    CHECK(arms[0].arm == Arm::Full);
    CHECK(arms[0].rank == 1);
    CHECK(arms[0].accuracy_rank == 2);
    CHECK(arms[0].unfairness_rank == 1);
    CHECK(arms[1].arm == Arm::SearchOnly);
    CHECK(arms.back().arm == Arm::Vanilla);
    for (std::size_t i = 0; i < arms.size(); ++i) CHECK(arms[i].rank == i + 1);
}
