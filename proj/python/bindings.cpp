#include "biasless/config.hpp"
#include "biasless/errors.hpp"
#include "biasless/experiment.hpp"

#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cmath>

namespace py = pybind11;
using namespace biasless;

namespace {

py::dict report_dict(const EvalReport& r) {
    py::dict d;
    d["overall_acc"] = r.overall_acc;
    d["group_acc"] = r.group_acc;
    d["unfairness"] = r.unfairness;
    d["di"] = std::isnan(r.di) ? py::object(py::none()) : py::object(py::float_(r.di));
    d["spd"] = r.spd;
    d["group_counts"] = r.group_counts;
    d["group_correct"] = r.group_correct;
    return d;
}

py::object row_dict(const std::optional<TraceRow>& row) {
    if (!row) return py::none();
    py::dict d;
    d["iteration"] = row->iteration;
    d["update"] = row->update;
    d["episode"] = row->episode;
    d["tokens"] = row->tokens;
    d["point"] = row->point;
    d["ratios"] = row->ratios;
    d["status"] = row->status;
    d["report"] = row->report ? py::object(report_dict(*row->report)) : py::object(py::none());
    d["reward"] = row->reward;
    return d;
}

py::dict search_dict(const SearchResult& res) {
    py::list rows;
    for (const auto& r : res.rows) rows.append(row_dict(r));
    py::dict d;
    d["rows"] = rows;
    d["best"] = row_dict(res.best);
    d["directory"] = res.directory;
    return d;
}

std::filesystem::path seed_dir(const ExperimentConfig& cfg, std::uint64_t seed) {
    return cfg.output_dir / std::string(to_string(cfg.mode)) / ("seed-" + std::to_string(seed));
}

ExperimentConfig make_config(const std::string& preset, const std::string& yaml) {
    ExperimentConfig cfg;
    if (!preset.empty()) apply_preset(cfg, preset);
    if (!yaml.empty()) apply_yaml_text(cfg, yaml);
    return cfg;
}

py::list search(ExperimentConfig cfg) {
    cfg.mode = Mode::Search;
    const auto data = prepare_data(cfg);
    cfg.validate();
    const SearchSpace space(cfg.space, data.train.group_sizes());
    const TrainingEvaluator evaluator(data, cfg.train, cfg.fairness);
    py::list out;
    for (auto seed : cfg.seeds) {
        SearchResult res;
        {
            py::gil_scoped_release nogil;
            res = run_search(make_search_setup(cfg, space, evaluator, seed, seed_dir(cfg, seed)));
        }
        out.append(search_dict(res));
    }
    return out;
}

py::list surrogate_search(ExperimentConfig cfg) {
    cfg.mode = Mode::SurrogateSearch;
    const auto data = prepare_data(cfg);
    cfg.validate();
    const SearchSpace space(cfg.space, data.train.group_sizes());
    py::list out;
    for (auto seed : cfg.seeds) {
        SearchResult res;
        std::string planted;
        {
            py::gil_scoped_release nogil;
            const auto table = cfg.surrogate_table
                                   ? load_table_csv(*cfg.surrogate_table, space.group_sizes(), cfg.surrogate.noise_scale)
                                   : build_table(space, seed, cfg.surrogate);
            planted = table.planted_entry().text;
            const SurrogateEvaluator evaluator(table, cfg.fairness);
            auto setup = make_search_setup(cfg, space, evaluator, seed, seed_dir(cfg, seed));
            setup.cache_children = cfg.cache_children && cfg.surrogate.noise_scale == 0.0;
            res = run_search(setup);
        }
        auto d = search_dict(res);
        d["planted"] = planted;
        out.append(d);
    }
    return out;
}

py::list train(ExperimentConfig cfg) {
    cfg.mode = Mode::TrainOne;
    const auto data = prepare_data(cfg);
    cfg.validate();
    py::list out;
    for (auto seed : cfg.seeds) {
        std::optional<TrainOneResult> res;
        {
            py::gil_scoped_release nogil;
            res = train_one(cfg, data, seed);
        }
        py::dict d;
        d["point"] = to_text(res->point);
        d["status"] = res->outcome.status;
        d["report"] = res->outcome.report ? py::object(report_dict(*res->outcome.report)) : py::object(py::none());
        py::list loss;
        for (const auto& l : res->outcome.loss) loss.append(py::make_tuple(l.epoch, l.step, l.loss, l.lr));
        d["loss"] = loss;
        out.append(d);
    }
    return out;
}

py::list ablation(ExperimentConfig cfg) {
    cfg.mode = Mode::Ablation;
    const auto data = prepare_data(cfg);
    cfg.validate();
    AblationResult res;
    {
        py::gil_scoped_release nogil;
        res = run_ablation(cfg, data);
    }
    py::list out;
    for (const auto& a : res.arms) {
        py::dict d;
        d["arm"] = std::string(to_string(a.arm));
        d["rank"] = a.rank;
        d["median_accuracy"] = a.median_accuracy;
        d["median_unfairness"] = a.median_unfairness;
        d["median_di"] = a.median_di;
        d["points"] = a.points;
        out.append(d);
    }
    return out;
}

}  // namespace

PYBIND11_MODULE(_biasless, m) {
    m.doc() = "Joint architecture and batch-ratio search with a fairness-aware reward";

    auto base = py::register_exception<Error>(m, "BiaslessError", PyExc_RuntimeError);
    py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
    py::register_exception<ConstraintError>(m, "ConstraintError", base.ptr());
    py::register_exception<SchemaError>(m, "SchemaError", base.ptr());
    py::register_exception<LookupError>(m, "LookupError", base.ptr());
    py::register_exception<DegenerateMetricError>(m, "DegenerateMetricError", base.ptr());
    py::register_exception<IoError>(m, "IoError", base.ptr());

    py::class_<ExperimentConfig>(m, "Config")
        .def(py::init(&make_config), py::arg("preset") = "", py::arg("yaml") = "")
        .def("apply_yaml", [](ExperimentConfig& c, const std::string& text) { apply_yaml_text(c, text); })
        .def("apply_preset", [](ExperimentConfig& c, const std::string& name) { apply_preset(c, name); })
        .def("to_yaml", [](const ExperimentConfig& c) { return to_yaml(c); })
        .def("validate", &ExperimentConfig::validate)
        .def_readwrite("seeds", &ExperimentConfig::seeds)
        .def_readwrite("output_dir", &ExperimentConfig::output_dir)
        .def_readwrite("updates", &ExperimentConfig::updates)
        .def_readwrite("workers", &ExperimentConfig::workers)
        .def_readwrite("resume", &ExperimentConfig::resume)
        .def_readwrite("point", &ExperimentConfig::point)
        .def_readwrite("ratio", &ExperimentConfig::ratio)
        .def_readwrite("fixed_arch", &ExperimentConfig::fixed_arch)
        .def_property(
            "alpha", [](const ExperimentConfig& c) { return c.reward.alpha; },
            [](ExperimentConfig& c, double v) { c.reward.alpha = v; })
        .def_property(
            "beta", [](const ExperimentConfig& c) { return c.reward.beta; },
            [](ExperimentConfig& c, double v) { c.reward.beta = v; })
        .def_property(
            "ac_threshold", [](const ExperimentConfig& c) { return c.reward.ac_threshold; },
            [](ExperimentConfig& c, double v) { c.reward.ac_threshold = v; })
        .def("__repr__", [](const ExperimentConfig& c) { return "<Config\n" + to_yaml(c) + ">"; });

    m.def("preset_names", &preset_names);
    m.def("search", &search, py::arg("config"), "Training-mode search for every configured seed.");
    m.def("surrogate_search", &surrogate_search, py::arg("config"));
    m.def("train_one", &train, py::arg("config"));
    m.def("run_ablation", &ablation, py::arg("config"));

    m.def(
        "unfairness_score",
        [](const std::vector<double>& group_acc, double overall) { return unfairness_score(group_acc, overall); },
        py::arg("group_acc"), py::arg("overall_acc"));
    m.def(
        "report_from_accuracies",
        [](const std::vector<double>& acc, const std::vector<std::size_t>& sizes) {
            return report_dict(report_from_accuracies(acc, sizes));
        },
        py::arg("group_acc"), py::arg("group_sizes"));
    m.def(
        "compute_reward",
        [](double accuracy, double unfairness, double alpha, double beta, double ac) {
            const RewardConfig cfg{alpha, beta, ac};
            cfg.validate();
            return compute_reward(accuracy, unfairness, cfg);
        },
        py::arg("accuracy"), py::arg("unfairness"), py::arg("alpha") = 0.2, py::arg("beta") = 0.8,
        py::arg("ac_threshold") = 0.6);
    m.def(
        "largest_remainder",
        [](const std::vector<double>& ratios, std::size_t total) { return largest_remainder(ratios, total); },
        py::arg("ratios"), py::arg("total"));
    m.def(
        "space_size",
        [](const ExperimentConfig& cfg, const std::vector<std::size_t>& group_sizes) {
            return SearchSpace(cfg.space, group_sizes).size();
        },
        py::arg("config"), py::arg("group_sizes"));
    m.def(
        "emit_plot_data",
        [](const std::filesystem::path& trace, const std::filesystem::path& out) {
            const auto f = emit_plot_data(trace, out);
            return py::make_tuple(f.scatter, f.reward_curve);
        },
        py::arg("trace_csv"), py::arg("out_dir"));
}
