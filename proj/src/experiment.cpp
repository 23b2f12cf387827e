#include "biasless/experiment.hpp"

#include "biasless/errors.hpp"
#include "biasless/seeding.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <exception>
#include <fstream>
#include <map>
#include <sstream>
#include <thread>

namespace biasless {

using nlohmann::json;

namespace {

std::string join_doubles(std::span<const double> values, char sep) {
    std::string out;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (i) out += sep;
        out += format_double(values[i]);
    }
    return out;
}

std::string join_ints(std::span<const int> values) {
    std::string out;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (i) out += ' ';
        out += std::to_string(values[i]);
    }
    return out;
}

double parse_double(std::string_view text, const std::string& where) {
    if (text == "nan") return std::numeric_limits<double>::quiet_NaN();
    double v = 0.0;
    const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
    if (res.ec != std::errc{} || res.ptr != text.data() + text.size())
        throw IoError(where + ": bad number '" + std::string(text) + "'");
    return v;
}

std::size_t parse_size(std::string_view text, const std::string& where) {
    std::size_t v = 0;
    const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
    if (res.ec != std::errc{} || res.ptr != text.data() + text.size())
        throw IoError(where + ": bad integer '" + std::string(text) + "'");
    return v;
}

// Splits one CSV record; fields may be double-quoted ("" escapes a quote).
std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out(1);
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                out.back() += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                out.back() += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.emplace_back();
        } else {
            out.back() += c;
        }
    }
    return out;
}

std::string quote(const std::string& s) {
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + '"';
}

json report_to_json(const EvalReport& r) {
    json j;
    j["accuracy"] = r.overall_acc;
    j["group_accuracy"] = r.group_acc;
    j["unfairness"] = r.unfairness;
    j["di"] = std::isnan(r.di) ? json(nullptr) : json(r.di);
    j["spd"] = r.spd;
    j["group_counts"] = r.group_counts;
    j["group_correct"] = r.group_correct;
    return j;
}

std::string trace_line(const TraceRow& row, std::size_t groups) {
    std::ostringstream os;
    os << row.iteration << ',' << row.update << ',' << row.episode << ',' << join_ints(row.tokens) << ','
       << quote(row.point) << ',' << join_doubles(row.ratios, '/') << ',' << row.status << ',';
    if (row.report) {
        const auto& r = *row.report;
        os << format_double(r.overall_acc);
        for (double a : r.group_acc) os << ',' << format_double(a);
        os << ',' << format_double(r.unfairness) << ',' << (std::isnan(r.di) ? "nan" : format_double(r.di)) << ','
           << format_double(r.spd);
    } else {
        os << std::string(groups + 3, ',');
    }
    os << ',' << format_double(row.reward) << ',' << format_double(row.baseline) << ','
       << format_double(row.gradient_norm);
    return os.str();
}

json row_json(const TraceRow& row, const std::string& message) {
    json j;
    j["iteration"] = row.iteration;
    j["update"] = row.update;
    j["episode"] = row.episode;
    j["tokens"] = row.tokens;
    j["point"] = row.point;
    j["status"] = row.status;
    j["reward"] = row.reward;
    j["report"] = row.report ? report_to_json(*row.report) : json(nullptr);
    if (!message.empty()) j["message"] = message;
    return j;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot write " + path.string());
    os << text;
    if (!os) throw IoError("failed writing " + path.string());
}

std::ofstream open_append(const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::app);
    if (!os) throw IoError("cannot append to " + path.string());
    return os;
}

// Keeps the first `keep` records after `header_lines` header lines, or, with
// a key column, the records whose first field is below `keep`.
void truncate_records(const std::filesystem::path& path, std::size_t header_lines, std::size_t keep, bool by_key) {
    if (!std::filesystem::exists(path)) return;
    std::ifstream is(path);
    std::string line, out;
    std::size_t n = 0, records = 0;
    while (std::getline(is, line)) {
        if (n++ < header_lines) {
            out += line + '\n';
            continue;
        }
        if (line.empty()) continue;
        const bool ok = by_key ? parse_size(line.substr(0, line.find(',')), path.string()) < keep : records < keep;
        if (ok) out += line + '\n';
        ++records;
    }
    is.close();
    write_text(path, out);
}

void write_best(const std::filesystem::path& path, const std::optional<TraceRow>& best) {
    json j = best ? row_json(*best, "") : json(nullptr);
    write_text(path, j.dump(2) + "\n");
}

}  // namespace

std::string report_json(const EvalReport& report) { return report_to_json(report).dump(); }

std::uint64_t child_seed(std::uint64_t search_seed, const std::string& point_text) {
    return derive_seed(search_seed, point_text);
}

double median(std::vector<double> values) {
    if (values.empty()) throw EvaluationError("median of an empty set");
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

DataSplits prepare_data(ExperimentConfig& cfg) {
    DataSplits d;
    if (cfg.manifest) {
        const auto base = cfg.manifest->parent_path();
        d.train = load_dataset(base, *cfg.manifest, Split::Train);
        d.validation = load_dataset(base, *cfg.manifest, Split::Validation);
    } else {
        auto [train, val] = generate_synthetic(cfg.synthetic);
        d.train = std::move(train);
        d.validation = std::move(val);
    }
    cfg.space.groups = d.train.group_count;
    cfg.space.num_classes = d.train.num_classes;
    cfg.space.input_channels = d.train.shape.channels;
    cfg.space.input_size = d.train.shape.height;
    return d;
}

BgmSpec resolve_bgm(std::string_view text, std::span<const std::size_t> group_sizes) {
    if (text == "balanced") {
        BgmSpec b = BgmSpec::balanced(group_sizes.size());
        b.check_ordering(group_sizes);
        return b;
    }
    return BgmSpec::bind(resolve_ratio(parse_ratio_candidate(text), group_sizes), group_sizes);
}

ChildOutcome TrainingEvaluator::evaluate(const SearchPoint& point, std::uint64_t seed) const {
    ChildOutcome out;
    TrainConfig cfg = train_;
    cfg.seed = seed;
    FairnessOptions fo = fairness_;
    fo.allow_degenerate = true;
    try {
        auto trained = train_child(point.arch, point.bgm, data_.train, cfg);
        out.loss = std::move(trained.trace);
        out.report = biasless::evaluate(trained.net, data_.validation, fo);
    } catch (const NumericError& e) {
        out.status = "diverged";
        out.message = e.what();
        out.report.reset();
    }
    return out;
}

ChildOutcome SurrogateEvaluator::evaluate(const SearchPoint& point, std::uint64_t seed) const {
    FairnessOptions fo = fairness_;
    fo.allow_degenerate = true;
    ChildOutcome out;
    out.report = surrogate_evaluate(table_, point, seed, fo);
    return out;
}

std::string trace_header(std::size_t groups) {
    std::string h = "iteration,update,episode,tokens,point,ratios,status,accuracy";
    for (std::size_t g = 0; g < groups; ++g) h += ",acc_g" + std::to_string(g + 1);
    return h + ",unfairness,di,spd,reward,baseline,grad_norm";
}

std::vector<TraceRow> read_trace(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open trace " + path.string());
    std::string line;
    if (!std::getline(is, line)) throw IoError("trace " + path.string() + " is empty");
    const auto header = split_csv(line);
    std::size_t groups = 0;
    for (const auto& h : header) groups += h.rfind("acc_g", 0) == 0 ? 1 : 0;
    if (header.size() != 14 + groups) throw IoError("trace " + path.string() + " has an unexpected header");
    std::vector<TraceRow> rows;
    std::size_t lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        const std::string where = path.string() + ":" + std::to_string(lineno);
        const auto f = split_csv(line);
        if (f.size() != header.size()) throw IoError(where + ": expected " + std::to_string(header.size()) + " fields");
        TraceRow r;
        r.iteration = parse_size(f[0], where);
        r.update = parse_size(f[1], where);
        r.episode = parse_size(f[2], where);
        std::istringstream ts(f[3]);
        for (int t; ts >> t;) r.tokens.push_back(t);
        r.point = f[4];
        if (!f[5].empty()) {
            std::size_t start = 0;
            while (true) {
                const auto end = f[5].find('/', start);
                r.ratios.push_back(parse_double(std::string_view(f[5]).substr(start, end - start), where));
                if (end == std::string::npos) break;
                start = end + 1;
            }
        }
        r.status = f[6];
        if (!f[7].empty()) {
            EvalReport rep;
            rep.overall_acc = parse_double(f[7], where);
            for (std::size_t g = 0; g < groups; ++g) rep.group_acc.push_back(parse_double(f[8 + g], where));
            rep.unfairness = parse_double(f[8 + groups], where);
            rep.di = parse_double(f[9 + groups], where);
            rep.spd = parse_double(f[10 + groups], where);
            r.report = rep;
        }
        r.reward = parse_double(f[11 + groups], where);
        r.baseline = parse_double(f[12 + groups], where);
        r.gradient_norm = parse_double(f[13 + groups], where);
        rows.push_back(std::move(r));
    }
    return rows;
}

SearchSetup make_search_setup(const ExperimentConfig& cfg, const SearchSpace& space, const ChildEvaluator& evaluator,
                              std::uint64_t seed, std::filesystem::path directory) {
    SearchSetup setup;
    setup.space = &space;
    setup.evaluator = &evaluator;
    setup.reward = cfg.reward;
    setup.reinforce = cfg.reinforce;
    setup.updates = cfg.updates;
    setup.controller_hidden = cfg.controller_hidden;
    setup.workers = cfg.workers;
    setup.cache_children = cfg.cache_children;
    setup.resume = cfg.resume;
    setup.seed = seed;
    setup.directory = std::move(directory);
    return setup;
}

SearchResult run_search(const SearchSetup& s) {
    if (s.space == nullptr || s.evaluator == nullptr) throw ConfigError("search needs a space and an evaluator");
    const SearchSpace& space = *s.space;
    const auto& schema = space.schema();
    s.reinforce.validate(schema.length());
    s.reward.validate();
    if (s.updates == 0) throw ConfigError("updates must be >= 1");
    const std::size_t m = s.reinforce.episode_batch;
    const std::size_t groups = space.group_sizes().size();

    std::error_code ec;
    std::filesystem::create_directories(s.directory, ec);
    if (ec) throw IoError("cannot create " + s.directory.string() + ": " + ec.message());
    const auto trace_path = s.directory / "trace.csv";
    const auto loss_path = s.directory / "loss_trace.csv";
    const auto reports_path = s.directory / "reports.jsonl";
    const auto timing_path = s.directory / "timing.csv";
    const auto ckpt_path = s.directory / "controller.bin";
    const auto best_path = s.directory / "best.json";

    const std::uint64_t controller_seed = derive_seed(s.seed, "controller");
    ControllerPolicy policy(schema, s.controller_hidden, controller_seed);
    SearchResult result;
    result.directory = s.directory;

    if (s.resume && std::filesystem::exists(ckpt_path) && std::filesystem::exists(trace_path)) {
        policy = ControllerPolicy::load(ckpt_path, schema);
        if (policy.hidden_size() != s.controller_hidden)
            throw SchemaError("checkpoint hidden size differs from the configured controller");
        const std::size_t keep = static_cast<std::size_t>(policy.update_count()) * m;
        truncate_records(trace_path, 1, keep, false);
        truncate_records(reports_path, 0, keep, false);
        truncate_records(timing_path, 1, keep, false);
        truncate_records(loss_path, 1, keep, true);
        result.rows = read_trace(trace_path);
        if (result.rows.size() != keep)
            throw IoError("trace " + trace_path.string() + " holds " + std::to_string(result.rows.size()) +
                          " rows but the checkpoint expects " + std::to_string(keep));
    } else {
        write_text(trace_path, trace_header(groups) + "\n");
        write_text(loss_path, "iteration,epoch,step,loss,lr\n");
        write_text(reports_path, "");
        write_text(timing_path, "iteration,seconds\n");
        std::filesystem::remove(ckpt_path, ec);
    }
    for (const auto& r : result.rows)
        if (r.report && (!result.best || r.reward > result.best->reward)) result.best = r;

    std::map<std::string, ChildOutcome> cache;
    const auto sampler_root = derive_seed(s.seed, "sampler");

    for (std::size_t u = static_cast<std::size_t>(policy.update_count()); u < s.updates; ++u) {
        const auto update_seed = derive_seed(sampler_root, "update", u);
        std::vector<SampledEpisode> samples;
        std::vector<std::optional<SearchPoint>> points(m);
        std::vector<std::string> texts(m);
        for (std::size_t k = 0; k < m; ++k) {
            samples.push_back(policy.sample(derive_seed(update_seed, "episode", k)));
            try {
                points[k] = space.decode(samples[k].tokens);
                texts[k] = to_text(*points[k]);
            } catch (const SchemaError&) {
                points[k].reset();
            }
        }

        // Evaluate each distinct uncached point once, possibly in parallel.
        std::vector<std::size_t> todo;
        std::map<std::string, std::size_t> first_of;
        for (std::size_t k = 0; k < m; ++k) {
            if (!points[k] || (s.cache_children && cache.count(texts[k]))) continue;
            if (first_of.emplace(texts[k], k).second) todo.push_back(k);
        }
        std::vector<ChildOutcome> fresh(todo.size());
        std::vector<double> seconds(m, 0.0);
        std::vector<std::exception_ptr> errors(todo.size());
        auto work = [&](std::size_t i) {
            const std::size_t k = todo[i];
            const auto t0 = std::chrono::steady_clock::now();
            try {
                fresh[i] = s.evaluator->evaluate(*points[k], child_seed(s.seed, texts[k]));
            } catch (...) {
                errors[i] = std::current_exception();
            }
            seconds[k] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        };
        const std::size_t workers = std::min(s.workers, todo.size());
        if (workers <= 1) {
            for (std::size_t i = 0; i < todo.size(); ++i) work(i);
        } else {
            std::vector<std::thread> pool;
            for (std::size_t w = 0; w < workers; ++w)
                pool.emplace_back([&, w] {
                    for (std::size_t i = w; i < todo.size(); i += workers) work(i);
                });
            for (auto& t : pool) t.join();
        }
        for (auto& e : errors)
            if (e) std::rethrow_exception(e);

        std::map<std::string, ChildOutcome> batch;
        for (std::size_t i = 0; i < todo.size(); ++i) batch[texts[todo[i]]] = fresh[i];
        if (s.cache_children)
            for (const auto& [text, outcome] : batch) cache[text] = outcome;

        std::vector<Episode> episodes;
        std::vector<TraceRow> rows;
        std::vector<const ChildOutcome*> outcomes(m, nullptr);
        for (std::size_t k = 0; k < m; ++k) {
            TraceRow row;
            row.iteration = u * m + k;
            row.update = u;
            row.episode = k;
            row.tokens = samples[k].tokens;
            if (!points[k]) {
                row.status = "invalid";
            } else {
                const auto it = batch.find(texts[k]);
                const ChildOutcome& o = it != batch.end() ? it->second : cache.at(texts[k]);
                outcomes[k] = &o;
                row.point = texts[k];
                row.ratios = points[k]->bgm.ratios();
                row.status = o.status;
                row.report = o.report;
            }
            row.reward = row.report ? compute_reward(*row.report, s.reward) : -1.0;
            episodes.push_back({samples[k].tokens, samples[k].log_probs, row.reward});
            rows.push_back(std::move(row));
        }

        const auto rep = policy.reinforce_update(episodes, s.reinforce);
        {
            auto trace = open_append(trace_path);
            auto reports = open_append(reports_path);
            auto timing = open_append(timing_path);
            auto loss = open_append(loss_path);
            for (std::size_t k = 0; k < m; ++k) {
                auto& row = rows[k];
                row.baseline = rep.baseline_used;
                row.gradient_norm = rep.gradient_norm;
                trace << trace_line(row, groups) << '\n';
                reports << row_json(row, outcomes[k] ? outcomes[k]->message : std::string()).dump() << '\n';
                timing << row.iteration << ',' << format_double(seconds[k]) << '\n';
                if (outcomes[k])
                    for (const auto& l : outcomes[k]->loss)
                        loss << row.iteration << ',' << l.epoch << ',' << l.step << ',' << format_double(l.loss) << ','
                             << format_double(l.lr) << '\n';
                if (row.report && (!result.best || row.reward > result.best->reward)) result.best = row;
            }
            if (!trace || !reports || !timing || !loss) throw IoError("failed writing search outputs in " + s.directory.string());
        }
        policy.save(ckpt_path);
        write_best(best_path, result.best);
        result.rows.insert(result.rows.end(), rows.begin(), rows.end());
        if (s.on_update) s.on_update(u, rows, policy);
    }
    write_best(best_path, result.best);
    return result;
}

PlotFiles emit_plot_data(const std::filesystem::path& trace_csv, const std::filesystem::path& out_dir) {
    std::ifstream is(trace_csv);
    if (!is) throw IoError("cannot open trace " + trace_csv.string());
    std::string line;
    if (!std::getline(is, line)) throw IoError("trace " + trace_csv.string() + " is empty");
    const auto header = split_csv(line);
    auto col = [&](const std::string& name) {
        const auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) throw IoError("trace " + trace_csv.string() + " has no column '" + name + "'");
        return static_cast<std::size_t>(it - header.begin());
    };
    const auto c_iter = col("iteration"), c_acc = col("accuracy"), c_u = col("unfairness"), c_r = col("reward"),
               c_b = col("baseline");

    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
    PlotFiles files{out_dir / "scatter.csv", out_dir / "reward_curve.csv"};
    std::string scatter = "iteration,accuracy,unfairness,reward\n";
    std::string curve = "iteration,reward,best_reward,baseline\n";
    std::size_t n = 0;
    double best = -std::numeric_limits<double>::infinity();
    std::string best_text;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto f = split_csv(line);
        if (f.size() != header.size()) throw IoError("trace " + trace_csv.string() + " has a malformed row");
        ++n;
        const double r = parse_double(f[c_r], trace_csv.string());
        if (r > best) {
            best = r;
            best_text = f[c_r];
        }
        if (!f[c_acc].empty()) scatter += f[c_iter] + ',' + f[c_acc] + ',' + f[c_u] + ',' + f[c_r] + '\n';
        curve += f[c_iter] + ',' + f[c_r] + ',' + best_text + ',' + f[c_b] + '\n';
    }
    if (n == 0) throw IoError("trace " + trace_csv.string() + " has no rows");
    write_text(files.scatter, scatter);
    write_text(files.reward_curve, curve);
    return files;
}

std::string_view to_string(Arm arm) {
    switch (arm) {
        case Arm::Vanilla: return "vanilla";
        case Arm::FairLossOnly: return "fair-loss-only";
        case Arm::BalancedFairLoss: return "balanced-fair-loss";
        case Arm::SearchOnly: return "search-only";
        case Arm::Full: return "full";
    }
    return "?";
}

std::vector<Arm> all_arms() {
    return {Arm::Vanilla, Arm::FairLossOnly, Arm::BalancedFairLoss, Arm::SearchOnly, Arm::Full};
}

void rank_arms(std::vector<ArmSummary>& arms) {
    for (auto& a : arms) {
        a.accuracy_rank = 1;
        a.unfairness_rank = 1;
        for (const auto& b : arms) {
            a.accuracy_rank += b.median_accuracy > a.median_accuracy ? 1 : 0;
            a.unfairness_rank += b.median_unfairness < a.median_unfairness ? 1 : 0;
        }
    }
    std::stable_sort(arms.begin(), arms.end(), [](const ArmSummary& a, const ArmSummary& b) {
        const auto sa = a.accuracy_rank + a.unfairness_rank, sb = b.accuracy_rank + b.unfairness_rank;
        if (sa != sb) return sa < sb;
        if (a.median_unfairness != b.median_unfairness) return a.median_unfairness < b.median_unfairness;
        return a.median_accuracy > b.median_accuracy;
    });
    for (std::size_t i = 0; i < arms.size(); ++i) arms[i].rank = i + 1;
}

SearchPoint resolve_point(const ExperimentConfig& cfg, std::span<const std::size_t> group_sizes) {
    const auto names = fixed_point_names();
    if (std::find(names.begin(), names.end(), cfg.point) != names.end())
        return {resolve_bgm(cfg.ratio, group_sizes), fixed_point(cfg.point, cfg.space)};
    return point_from_text(cfg.point, cfg.space, group_sizes);
}

TrainOneResult train_one(const ExperimentConfig& cfg, const DataSplits& data, std::uint64_t seed) {
    const auto sizes = data.train.group_sizes();
    TrainOneResult out{resolve_point(cfg, sizes), {}, std::nullopt};
    TrainConfig tc = cfg.train;
    tc.seed = child_seed(seed, to_text(out.point));
    FairnessOptions fo = cfg.fairness;
    fo.allow_degenerate = true;
    try {
        auto trained = train_child(out.point.arch, out.point.bgm, data.train, tc);
        out.outcome.loss = std::move(trained.trace);
        out.outcome.report = evaluate(trained.net, data.validation, fo);
        out.network = std::move(trained.net);
    } catch (const NumericError& e) {
        out.outcome.status = "diverged";
        out.outcome.message = e.what();
    }
    return out;
}

AblationResult run_ablation(ExperimentConfig cfg, const DataSplits& data,
                            const std::function<void(const std::string&)>& log) {
    const auto sizes = data.train.group_sizes();
    AblationResult result;
    result.directory = cfg.output_dir / "ablation";
    std::error_code ec;
    std::filesystem::create_directories(result.directory, ec);
    if (ec) throw IoError("cannot create " + result.directory.string() + ": " + ec.message());

    for (Arm arm : all_arms()) {
        ArmSummary summary;
        summary.arm = arm;
        for (auto seed : cfg.seeds) {
            const auto dir = result.directory / std::string(to_string(arm)) / ("seed-" + std::to_string(seed));
            std::filesystem::create_directories(dir, ec);
            ExperimentConfig arm_cfg = cfg;
            std::optional<EvalReport> report;
            std::string point;
            if (arm == Arm::SearchOnly || arm == Arm::Full) {
                if (arm == Arm::SearchOnly) {
                    arm_cfg.space.ratio_grid = {ProportionalRatio{}};
                    arm_cfg.train.loss = LossMode::Plain;
                } else {
                    arm_cfg.train.loss = LossMode::Fair;
                }
                const SearchSpace space(arm_cfg.space, sizes);
                const TrainingEvaluator evaluator(data, arm_cfg.train, arm_cfg.fairness);
                const auto res = run_search(make_search_setup(arm_cfg, space, evaluator, seed, dir));
                if (res.best) {
                    report = res.best->report;
                    point = res.best->point;
                }
            } else {
                arm_cfg.point = cfg.fixed_arch;
                arm_cfg.ratio = arm == Arm::BalancedFairLoss ? "balanced" : "proportional";
                arm_cfg.train.loss = arm == Arm::Vanilla ? LossMode::Plain : LossMode::Fair;
                const auto one = train_one(arm_cfg, data, seed);
                report = one.outcome.report;
                point = to_text(one.point);
                json j = row_json(TraceRow{0, 0, 0, {}, point, one.point.bgm.ratios(), one.outcome.status, report,
                                           report ? compute_reward(*report, cfg.reward) : -1.0, 0.0, 0.0},
                                  one.outcome.message);
                write_text(dir / "report.json", j.dump(2) + "\n");
            }
            if (!report) throw EvaluationError("ablation arm " + std::string(to_string(arm)) + " produced no valid child for seed " + std::to_string(seed));
            summary.per_seed.push_back(*report);
            summary.points.push_back(point);
            if (log)
                log(std::string(to_string(arm)) + " seed " + std::to_string(seed) + ": A=" + format_double(report->overall_acc) +
                    " U=" + format_double(report->unfairness));
        }
        std::vector<double> acc, u, di, spd;
        for (const auto& r : summary.per_seed) {
            acc.push_back(r.overall_acc);
            u.push_back(r.unfairness);
            if (!std::isnan(r.di)) di.push_back(r.di);
            spd.push_back(r.spd);
        }
        summary.median_accuracy = median(acc);
        summary.median_unfairness = median(u);
        summary.median_di = di.empty() ? std::numeric_limits<double>::quiet_NaN() : median(di);
        summary.median_spd = median(spd);
        result.arms.push_back(std::move(summary));
    }
    rank_arms(result.arms);

    std::string csv = "rank,arm,accuracy,unfairness,di,spd,accuracy_rank,unfairness_rank\n";
    json j = json::array();
    for (const auto& a : result.arms) {
        csv += std::to_string(a.rank) + ',' + std::string(to_string(a.arm)) + ',' + format_double(a.median_accuracy) + ',' +
               format_double(a.median_unfairness) + ',' + format_double(a.median_di) + ',' + format_double(a.median_spd) +
               ',' + std::to_string(a.accuracy_rank) + ',' + std::to_string(a.unfairness_rank) + '\n';
        json arm;
        arm["rank"] = a.rank;
        arm["arm"] = std::string(to_string(a.arm));
        arm["median_accuracy"] = a.median_accuracy;
        arm["median_unfairness"] = a.median_unfairness;
        arm["median_di"] = std::isnan(a.median_di) ? json(nullptr) : json(a.median_di);
        arm["median_spd"] = a.median_spd;
        arm["seeds"] = json::array();
        for (std::size_t i = 0; i < a.per_seed.size(); ++i)
            arm["seeds"].push_back({{"seed", cfg.seeds[i]}, {"point", a.points[i]}, {"report", report_to_json(a.per_seed[i])}});
        j.push_back(arm);
    }
    write_text(result.directory / "ranking.csv", csv);
    write_text(result.directory / "ranking.json", j.dump(2) + "\n");
    return result;
}

}  // namespace biasless
