#include "biasless/config.hpp"
#include "biasless/errors.hpp"
#include "biasless/experiment.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace biasless;

namespace {

struct Flags {
    std::string preset;
    std::string config;
    std::vector<std::uint64_t> seeds;
    std::string out;
    std::optional<std::size_t> updates, episodes, workers, depth;
    std::optional<int> epochs;
    std::optional<std::size_t> batch_size;
    std::optional<double> alpha, beta, ac, train_lr, policy_lr, gamma, noise;
    std::string loss;
    std::string manifest;
    std::string point, ratio, arch, snapshot, table;
    bool no_resume = false;
    bool no_cache = false;
    // emit-plots
    std::string trace;
};

void add_common(CLI::App* cmd, Flags& f) {
    cmd->add_option("--preset", f.preset, "Named preset: fair, acc, fat, desk, smoke");
    cmd->add_option("--config", f.config, "YAML config; its values override flags");
    cmd->add_option("--seed", f.seeds, "Seed(s); repeat for several runs");
    cmd->add_option("--out", f.out, "Output directory (default $BIASLESS_OUT or ./runs)");
    cmd->add_option("--manifest", f.manifest, "Dataset manifest instead of the synthetic generator");
    cmd->add_option("--epochs", f.epochs, "Child training epochs");
    cmd->add_option("--batch-size", f.batch_size, "Child batch size");
    cmd->add_option("--train-lr", f.train_lr, "Child initial learning rate");
    cmd->add_option("--loss", f.loss, "Child loss: fair or plain");
}

void add_search(CLI::App* cmd, Flags& f) {
    cmd->add_option("--updates", f.updates, "Controller updates");
    cmd->add_option("--episodes", f.episodes, "Episodes per update (m)");
    cmd->add_option("--workers", f.workers, "Children trained concurrently");
    cmd->add_option("--depth", f.depth, "Backbone slots (L)");
    cmd->add_option("--alpha", f.alpha, "Reward weight on accuracy");
    cmd->add_option("--beta", f.beta, "Reward weight on unfairness");
    cmd->add_option("--ac", f.ac, "Minimum acceptable accuracy");
    cmd->add_option("--policy-lr", f.policy_lr, "Controller learning rate");
    cmd->add_option("--gamma", f.gamma, "Reward discount");
    cmd->add_flag("--no-resume", f.no_resume, "Start over even if a checkpoint exists");
    cmd->add_flag("--no-cache", f.no_cache, "Retrain repeated children");
}

ExperimentConfig build_config(Mode mode, const Flags& f) {
    ExperimentConfig cfg;
    cfg.mode = mode;
    if (const char* root = std::getenv("BIASLESS_OUT"); root && *root) cfg.output_dir = root;
    if (!f.preset.empty()) apply_preset(cfg, f.preset);
    cfg.mode = mode;
    if (!f.seeds.empty()) cfg.seeds = f.seeds;
    if (!f.out.empty()) cfg.output_dir = f.out;
    if (!f.manifest.empty()) cfg.manifest = f.manifest;
    if (f.epochs) cfg.train.epochs = *f.epochs;
    if (f.batch_size) cfg.train.batch_size = *f.batch_size;
    if (f.train_lr) cfg.train.learning_rate = *f.train_lr;
    if (!f.loss.empty()) cfg.train.loss = parse_loss_mode(f.loss);
    if (f.updates) cfg.updates = *f.updates;
    if (f.episodes) cfg.reinforce.episode_batch = *f.episodes;
    if (f.workers) cfg.workers = *f.workers;
    if (f.depth) cfg.space.depth = *f.depth;
    if (f.alpha) cfg.reward.alpha = *f.alpha;
    if (f.beta) cfg.reward.beta = *f.beta;
    if (f.ac) cfg.reward.ac_threshold = *f.ac;
    if (f.policy_lr) cfg.reinforce.learning_rate = *f.policy_lr;
    if (f.gamma) cfg.reinforce.gamma = *f.gamma;
    if (f.noise) cfg.surrogate.noise_scale = *f.noise;
    if (f.no_resume) cfg.resume = false;
    if (f.no_cache) cfg.cache_children = false;
    if (!f.point.empty()) cfg.point = f.point;
    if (!f.ratio.empty()) cfg.ratio = f.ratio;
    if (!f.arch.empty()) cfg.fixed_arch = f.arch;
    if (!f.snapshot.empty()) cfg.snapshot = f.snapshot;
    if (!f.table.empty()) cfg.surrogate_table = f.table;
    if (!f.config.empty()) apply_yaml_file(cfg, f.config);
    cfg.mode = mode;
    return cfg;
}

void write_file(const fs::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::trunc);
    if (!os || !(os << text)) throw IoError("cannot write " + path.string());
}

fs::path run_dir(const ExperimentConfig& cfg, std::uint64_t seed) {
    auto dir = cfg.output_dir / std::string(to_string(cfg.mode)) / ("seed-" + std::to_string(seed));
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    return dir;
}

void print_report(const std::string& label, const EvalReport& r) {
    std::cout << label << " A=" << format_double(r.overall_acc) << " U=" << format_double(r.unfairness)
              << " DI=" << format_double(r.di) << " SPD=" << format_double(r.spd) << " groups=[";
    for (std::size_t g = 0; g < r.group_acc.size(); ++g) std::cout << (g ? "," : "") << format_double(r.group_acc[g]);
    std::cout << "]\n";
}

void print_best(const SearchResult& res) {
    if (res.best && res.best->report) {
        std::cout << "best " << res.best->point << " reward=" << format_double(res.best->reward) << '\n';
        print_report("  ", *res.best->report);
    } else {
        std::cout << "no valid child found\n";
    }
    std::cout << "  trace: " << (res.directory / "trace.csv").string() << '\n';
}

int cmd_search(ExperimentConfig cfg) {
    const auto data = prepare_data(cfg);
    cfg.validate();
    const SearchSpace space(cfg.space, data.train.group_sizes());
    const TrainingEvaluator evaluator(data, cfg.train, cfg.fairness);
    for (auto seed : cfg.seeds) {
        const auto dir = run_dir(cfg, seed);
        write_file(dir / "config.yaml", to_yaml(cfg));
        auto setup = make_search_setup(cfg, space, evaluator, seed, dir);
        setup.on_update = [&](std::size_t u, const std::vector<TraceRow>& rows, const ControllerPolicy&) {
            double best = -1.0;
            for (const auto& r : rows) best = std::max(best, r.reward);
            std::cerr << "seed " << seed << " update " << u + 1 << "/" << cfg.updates << " best reward in batch "
                      << format_double(best) << '\n';
        };
        std::cout << "seed " << seed << ": search space has " << space.size() << " points\n";
        print_best(run_search(setup));
    }
    return 0;
}

int cmd_surrogate_search(ExperimentConfig cfg) {
    // Group sizes come from the configured data (synthetic by default) so the
    // ratio grid is filtered exactly as in a training search.
    const auto data = prepare_data(cfg);
    cfg.validate();
    const SearchSpace space(cfg.space, data.train.group_sizes());
    for (auto seed : cfg.seeds) {
        const auto dir = run_dir(cfg, seed);
        write_file(dir / "config.yaml", to_yaml(cfg));
        SurrogateTable table = cfg.surrogate_table
                                   ? load_table_csv(*cfg.surrogate_table, space.group_sizes(), cfg.surrogate.noise_scale)
                                   : build_table(space, seed, cfg.surrogate);
        if (!cfg.surrogate_table) save_table_csv(table, dir / "surrogate.csv");
        const SurrogateEvaluator evaluator(table, cfg.fairness);
        auto setup = make_search_setup(cfg, space, evaluator, seed, dir);
        setup.cache_children = cfg.cache_children && cfg.surrogate.noise_scale == 0.0;
        const auto res = run_search(setup);
        std::cout << "seed " << seed << ": planted optimum " << table.planted_entry().text << '\n';
        print_best(res);
    }
    return 0;
}

int cmd_train_one(ExperimentConfig cfg) {
    const auto data = prepare_data(cfg);
    cfg.validate();
    for (auto seed : cfg.seeds) {
        const auto dir = run_dir(cfg, seed);
        write_file(dir / "config.yaml", to_yaml(cfg));
        const auto res = train_one(cfg, data, seed);
        std::string loss = "epoch,step,loss,lr\n";
        for (const auto& l : res.outcome.loss)
            loss += std::to_string(l.epoch) + ',' + std::to_string(l.step) + ',' + format_double(l.loss) + ',' +
                    format_double(l.lr) + '\n';
        write_file(dir / "loss_trace.csv", loss);
        std::cout << "seed " << seed << ": " << to_text(res.point) << '\n';
        if (!res.outcome.report) {
            std::cerr << "training diverged: " << res.outcome.message << '\n';
            return 3;
        }
        write_file(dir / "report.json", report_json(*res.outcome.report) + "\n");
        save_snapshot(*res.network, dir / "network.bin");
        print_report("  ", *res.outcome.report);
        std::cout << "  snapshot: " << (dir / "network.bin").string() << '\n';
    }
    return 0;
}

int cmd_evaluate(ExperimentConfig cfg) {
    const auto data = prepare_data(cfg);
    cfg.validate();
    const auto point = resolve_point(cfg, data.train.group_sizes());
    auto net = load_snapshot(*cfg.snapshot, point.arch);
    const auto report = evaluate(net, data.validation, cfg.fairness);
    std::cout << report_json(report) << '\n';
    return 0;
}

int cmd_ablation(ExperimentConfig cfg) {
    const auto data = prepare_data(cfg);
    cfg.validate();
    fs::create_directories(cfg.output_dir);
    write_file(cfg.output_dir / "ablation-config.yaml", to_yaml(cfg));
    const auto res = run_ablation(cfg, data, [](const std::string& line) { std::cerr << line << '\n'; });
    std::cout << "rank arm                 accuracy  unfairness  DI\n";
    for (const auto& a : res.arms) {
        std::cout << a.rank << "    " << std::string(to_string(a.arm)) << std::string(20 - to_string(a.arm).size(), ' ')
                  << format_double(a.median_accuracy) << "  " << format_double(a.median_unfairness) << "  "
                  << format_double(a.median_di) << '\n';
    }
    std::cout << "ranking: " << (res.directory / "ranking.csv").string() << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Joint search over network architectures and batch composition with a fairness-aware reward"};
    app.require_subcommand(1);
    Flags f;

    auto* search = app.add_subcommand("search", "Controller search with trained children");
    add_common(search, f);
    add_search(search, f);

    auto* surrogate = app.add_subcommand("surrogate-search", "Controller search against a surrogate table");
    add_common(surrogate, f);
    add_search(surrogate, f);
    surrogate->add_option("--table", f.table, "Surrogate CSV (built from the seed when omitted)");
    surrogate->add_option("--noise", f.noise, "Per-lookup accuracy noise");

    auto* train = app.add_subcommand("train-one", "Train and score a single point");
    add_common(train, f);
    train->add_option("--point", f.point, "Point text or fixed backbone name (all-CB, all-MB, ...)");
    train->add_option("--ratio", f.ratio, "Ratio for a named backbone: balanced, proportional, 0.25, 0.75/0.25");

    auto* eval = app.add_subcommand("evaluate", "Score a saved network on the validation split");
    add_common(eval, f);
    eval->add_option("--point", f.point, "Point the snapshot was trained as");
    eval->add_option("--ratio", f.ratio, "Ratio for a named backbone");
    eval->add_option("--snapshot", f.snapshot, "Network snapshot")->required();

    auto* ablation = app.add_subcommand("ablation", "Compare the data, loss and search ablation arms");
    add_common(ablation, f);
    add_search(ablation, f);
    ablation->add_option("--arch", f.arch, "Backbone for the fixed-architecture arms");

    auto* plots = app.add_subcommand("emit-plots", "Write scatter and reward-curve CSVs from a trace");
    plots->add_option("--trace", f.trace, "trace.csv")->required();
    plots->add_option("--out", f.out, "Output directory (default: next to the trace)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (plots->parsed()) {
            const fs::path trace = f.trace;
            const auto files = emit_plot_data(trace, f.out.empty() ? trace.parent_path() : fs::path(f.out));
            std::cout << files.scatter.string() << '\n' << files.reward_curve.string() << '\n';
            return 0;
        }
        if (search->parsed()) return cmd_search(build_config(Mode::Search, f));
        if (surrogate->parsed()) return cmd_surrogate_search(build_config(Mode::SurrogateSearch, f));
        if (train->parsed()) return cmd_train_one(build_config(Mode::TrainOne, f));
        if (eval->parsed()) return cmd_evaluate(build_config(Mode::Evaluate, f));
        if (ablation->parsed()) return cmd_ablation(build_config(Mode::Ablation, f));
    } catch (const biasless::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return e.exit_code();
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 4;
    }
    return 0;
}
