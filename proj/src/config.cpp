#include "biasless/config.hpp"

#include "biasless/errors.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

namespace biasless {

std::string_view to_string(Mode mode) {
    switch (mode) {
        case Mode::Search: return "search";
        case Mode::TrainOne: return "train-one";
        case Mode::Evaluate: return "evaluate";
        case Mode::SurrogateSearch: return "surrogate-search";
        case Mode::Ablation: return "ablation";
    }
    return "?";
}

Mode parse_mode(std::string_view text) {
    for (auto m : {Mode::Search, Mode::TrainOne, Mode::Evaluate, Mode::SurrogateSearch, Mode::Ablation})
        if (to_string(m) == text) return m;
    throw ConfigError("unknown mode '" + std::string(text) + "'");
}

void ExperimentConfig::validate() const {
    space.validate();
    reward.validate();
    train.validate(space.groups);
    if (!manifest) synthetic.validate();
    if (seeds.empty()) throw ConfigError("at least one seed is required");
    if (updates == 0) throw ConfigError("updates must be >= 1");
    if (controller_hidden == 0) throw ConfigError("controller hidden size must be >= 1");
    if (workers == 0) throw ConfigError("workers must be >= 1");
    if (!(surrogate.noise_scale >= 0.0)) throw ConfigError("surrogate noise scale must be >= 0");
    if (mode == Mode::Evaluate && !snapshot) throw ConfigError("evaluate needs a network snapshot");
    if (fairness.privileged_group && *fairness.privileged_group >= space.groups)
        throw ConfigError("privileged group " + std::to_string(*fairness.privileged_group + 1) + " does not exist");
}

void apply_preset(ExperimentConfig& cfg, std::string_view name) {
    auto desk = [&] {
        cfg.space.depth = 4;
        cfg.space.channels = {8, 16};
        cfg.space.kernels = {3, 5};
        cfg.updates = 20;
        cfg.reinforce.episode_batch = 5;
        cfg.train.epochs = 10;
    };
    if (name == "desk") {
        desk();
    } else if (name == "fair") {
        desk();
        cfg.reward.alpha = 0.2;
        cfg.reward.beta = 0.8;
        cfg.train.loss = LossMode::Fair;
    } else if (name == "acc") {
        desk();
        cfg.reward.alpha = 0.8;
        cfg.reward.beta = 0.2;
        cfg.train.loss = LossMode::Fair;
    } else if (name == "fat") {
        desk();
        cfg.mode = Mode::TrainOne;
        cfg.ratio = "balanced";
        cfg.train.loss = LossMode::Fair;
    } else if (name == "smoke") {
        cfg.space.depth = 2;
        cfg.space.channels = {4, 8};
        cfg.space.kernels = {3};
        cfg.space.stem_channels = 4;
        cfg.updates = 2;
        cfg.reinforce.episode_batch = 2;
        cfg.train.epochs = 2;
        cfg.train.batch_size = 16;
        for (auto& g : cfg.synthetic.groups) {
            g.train_count = std::max<std::size_t>(8, g.train_count / 10);
            g.val_count = std::max<std::size_t>(8, g.val_count / 10);
        }
    } else {
        throw ConfigError("unknown preset '" + std::string(name) + "'");
    }
}

std::vector<std::string> preset_names() { return {"fair", "acc", "fat", "desk", "smoke"}; }

namespace {

class Reader {
public:
    Reader(const YAML::Node& node, std::string where) : node_(node), where_(std::move(where)) {
        if (!node_.IsMap()) throw ConfigError(where_ + ": expected a mapping");
    }

    template <class T>
    void read(const char* key, T& out) {
        seen_.insert(key);
        if (const auto n = node_[key]) {
            try {
                out = n.as<T>();
            } catch (const YAML::Exception&) {
                throw ConfigError(where_ + "." + key + ": wrong type");
            }
        }
    }

    template <class F>
    void with(const char* key, F&& f) {
        seen_.insert(key);
        if (const auto n = node_[key]) f(n, where_ + "." + key);
    }

    void finish() const {
        for (const auto& kv : node_) {
            const auto key = kv.first.as<std::string>();
            if (!seen_.count(key)) throw ConfigError(where_ + ": unknown key '" + key + "'");
        }
    }

private:
    const YAML::Node& node_;
    std::string where_;
    std::set<std::string> seen_;
};

void read_space(const YAML::Node& n, const std::string& where, SearchSpaceConfig& s) {
    Reader r(n, where);
    r.read("depth", s.depth);
    r.read("channels", s.channels);
    r.read("kernels", s.kernels);
    r.read("stem_channels", s.stem_channels);
    r.with("block_types", [&](const YAML::Node& v, const std::string&) {
        s.block_types.clear();
        for (const auto& t : v) s.block_types.push_back(parse_block_type(t.as<std::string>()));
    });
    r.with("ratio_grid", [&](const YAML::Node& v, const std::string&) {
        s.ratio_grid.clear();
        for (const auto& t : v) s.ratio_grid.push_back(parse_ratio_candidate(t.as<std::string>()));
    });
    r.finish();
}

void read_reward(const YAML::Node& n, const std::string& where, RewardConfig& c) {
    Reader r(n, where);
    r.read("alpha", c.alpha);
    r.read("beta", c.beta);
    r.read("ac_threshold", c.ac_threshold);
    r.finish();
}

void read_controller(const YAML::Node& n, const std::string& where, ReinforceConfig& c) {
    Reader r(n, where);
    r.read("episode_batch", c.episode_batch);
    r.read("steps_per_episode", c.steps_per_episode);
    r.read("gamma", c.gamma);
    r.read("baseline_decay", c.baseline_decay);
    r.read("learning_rate", c.learning_rate);
    r.read("entropy_weight", c.entropy_weight);
    r.finish();
}

void read_train(const YAML::Node& n, const std::string& where, TrainConfig& c) {
    Reader r(n, where);
    r.read("epochs", c.epochs);
    r.read("batch_size", c.batch_size);
    r.read("learning_rate", c.learning_rate);
    r.read("lr_decay", c.lr_decay);
    r.read("decay_interval", c.decay_interval);
    r.read("mean_loss", c.mean_loss);
    r.with("loss", [&](const YAML::Node& v, const std::string&) { c.loss = parse_loss_mode(v.as<std::string>()); });
    r.finish();
}

void read_data(const YAML::Node& n, const std::string& where, SyntheticBiasConfig& c) {
    Reader r(n, where);
    r.read("num_classes", c.num_classes);
    r.read("size", c.size);
    r.read("channels", c.channels);
    r.read("seed", c.seed);
    r.with("groups", [&](const YAML::Node& v, const std::string& w) {
        if (!v.IsSequence()) throw ConfigError(w + ": expected a list");
        c.groups.clear();
        for (std::size_t i = 0; i < v.size(); ++i) {
            GroupProfile g;
            Reader gr(v[i], w + "[" + std::to_string(i) + "]");
            gr.read("train_count", g.train_count);
            gr.read("val_count", g.val_count);
            gr.read("signal", g.signal);
            gr.read("noise", g.noise);
            gr.read("tone", g.tone);
            gr.read("mix", g.mix);
            gr.finish();
            c.groups.push_back(g);
        }
    });
    r.finish();
}

void apply_node(ExperimentConfig& cfg, const YAML::Node& root) {
    if (!root || root.IsNull()) return;
    Reader r(root, "config");
    r.with("mode", [&](const YAML::Node& v, const std::string&) { cfg.mode = parse_mode(v.as<std::string>()); });
    r.read("seeds", cfg.seeds);
    r.with("output_dir", [&](const YAML::Node& v, const std::string&) { cfg.output_dir = v.as<std::string>(); });
    r.read("updates", cfg.updates);
    r.read("controller_hidden", cfg.controller_hidden);
    r.read("workers", cfg.workers);
    r.read("cache_children", cfg.cache_children);
    r.read("resume", cfg.resume);
    r.read("point", cfg.point);
    r.read("ratio", cfg.ratio);
    r.read("fixed_arch", cfg.fixed_arch);
    r.with("manifest", [&](const YAML::Node& v, const std::string&) { cfg.manifest = v.as<std::string>(); });
    r.with("snapshot", [&](const YAML::Node& v, const std::string&) { cfg.snapshot = v.as<std::string>(); });
    r.with("surrogate_table", [&](const YAML::Node& v, const std::string&) { cfg.surrogate_table = v.as<std::string>(); });
    r.with("space", [&](const YAML::Node& v, const std::string& w) { read_space(v, w, cfg.space); });
    r.with("reward", [&](const YAML::Node& v, const std::string& w) { read_reward(v, w, cfg.reward); });
    r.with("controller", [&](const YAML::Node& v, const std::string& w) { read_controller(v, w, cfg.reinforce); });
    r.with("train", [&](const YAML::Node& v, const std::string& w) { read_train(v, w, cfg.train); });
    r.with("data", [&](const YAML::Node& v, const std::string& w) { read_data(v, w, cfg.synthetic); });
    r.with("surrogate", [&](const YAML::Node& v, const std::string& w) {
        Reader sr(v, w);
        sr.read("cap", cfg.surrogate.cap);
        sr.read("noise_scale", cfg.surrogate.noise_scale);
        sr.finish();
    });
    r.with("fairness", [&](const YAML::Node& v, const std::string& w) {
        Reader fr(v, w);
        std::size_t privileged = 0;
        fr.read("privileged_group", privileged);
        fr.finish();
        if (privileged == 0) throw ConfigError(w + ".privileged_group: groups are numbered from 1");
        cfg.fairness.privileged_group = privileged - 1;
    });
    r.finish();
}

}  // namespace

void apply_yaml_text(ExperimentConfig& cfg, const std::string& text) {
    YAML::Node root;
    try {
        root = YAML::Load(text);
    } catch (const YAML::Exception& e) {
        throw ConfigError(std::string("invalid YAML: ") + e.what());
    }
    try {
        apply_node(cfg, root);
    } catch (const YAML::Exception& e) {
        throw ConfigError(std::string("invalid config value: ") + e.what());
    }
}

void apply_yaml_file(ExperimentConfig& cfg, const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot read config file " + path.string());
    std::stringstream ss;
    ss << is.rdbuf();
    try {
        apply_yaml_text(cfg, ss.str());
    } catch (const ConfigError& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

std::string to_yaml(const ExperimentConfig& cfg) {
    YAML::Emitter e;
    e << YAML::BeginMap;
    e << YAML::Key << "mode" << YAML::Value << std::string(to_string(cfg.mode));
    e << YAML::Key << "seeds" << YAML::Value << YAML::Flow << cfg.seeds;
    e << YAML::Key << "output_dir" << YAML::Value << cfg.output_dir.string();
    e << YAML::Key << "updates" << YAML::Value << cfg.updates;
    e << YAML::Key << "controller_hidden" << YAML::Value << cfg.controller_hidden;
    e << YAML::Key << "workers" << YAML::Value << cfg.workers;
    e << YAML::Key << "cache_children" << YAML::Value << cfg.cache_children;
    e << YAML::Key << "resume" << YAML::Value << cfg.resume;
    e << YAML::Key << "point" << YAML::Value << cfg.point;
    e << YAML::Key << "ratio" << YAML::Value << cfg.ratio;
    e << YAML::Key << "fixed_arch" << YAML::Value << cfg.fixed_arch;
    if (cfg.manifest) e << YAML::Key << "manifest" << YAML::Value << cfg.manifest->string();
    if (cfg.snapshot) e << YAML::Key << "snapshot" << YAML::Value << cfg.snapshot->string();
    if (cfg.surrogate_table) e << YAML::Key << "surrogate_table" << YAML::Value << cfg.surrogate_table->string();

    e << YAML::Key << "space" << YAML::Value << YAML::BeginMap;
    e << YAML::Key << "depth" << YAML::Value << cfg.space.depth;
    std::vector<std::string> types;
    for (auto t : cfg.space.block_types) types.emplace_back(to_string(t));
    e << YAML::Key << "block_types" << YAML::Value << YAML::Flow << types;
    e << YAML::Key << "channels" << YAML::Value << YAML::Flow << cfg.space.channels;
    e << YAML::Key << "kernels" << YAML::Value << YAML::Flow << cfg.space.kernels;
    std::vector<std::string> grid;
    for (const auto& c : cfg.space.ratio_grid) grid.push_back(to_string(c));
    e << YAML::Key << "ratio_grid" << YAML::Value << YAML::Flow << grid;
    e << YAML::Key << "stem_channels" << YAML::Value << cfg.space.stem_channels;
    e << YAML::EndMap;

    e << YAML::Key << "reward" << YAML::Value << YAML::BeginMap;
    e << YAML::Key << "alpha" << YAML::Value << cfg.reward.alpha;
    e << YAML::Key << "beta" << YAML::Value << cfg.reward.beta;
    e << YAML::Key << "ac_threshold" << YAML::Value << cfg.reward.ac_threshold;
    e << YAML::EndMap;

    e << YAML::Key << "controller" << YAML::Value << YAML::BeginMap;
    e << YAML::Key << "episode_batch" << YAML::Value << cfg.reinforce.episode_batch;
    e << YAML::Key << "steps_per_episode" << YAML::Value << cfg.reinforce.steps_per_episode;
    e << YAML::Key << "gamma" << YAML::Value << cfg.reinforce.gamma;
    e << YAML::Key << "baseline_decay" << YAML::Value << cfg.reinforce.baseline_decay;
    e << YAML::Key << "learning_rate" << YAML::Value << cfg.reinforce.learning_rate;
    e << YAML::Key << "entropy_weight" << YAML::Value << cfg.reinforce.entropy_weight;
    e << YAML::EndMap;

    e << YAML::Key << "train" << YAML::Value << YAML::BeginMap;
    e << YAML::Key << "epochs" << YAML::Value << cfg.train.epochs;
    e << YAML::Key << "batch_size" << YAML::Value << cfg.train.batch_size;
    e << YAML::Key << "learning_rate" << YAML::Value << cfg.train.learning_rate;
    e << YAML::Key << "lr_decay" << YAML::Value << cfg.train.lr_decay;
    e << YAML::Key << "decay_interval" << YAML::Value << cfg.train.decay_interval;
    e << YAML::Key << "loss" << YAML::Value << std::string(to_string(cfg.train.loss));
    e << YAML::Key << "mean_loss" << YAML::Value << cfg.train.mean_loss;
    e << YAML::EndMap;

    if (!cfg.manifest) {
        e << YAML::Key << "data" << YAML::Value << YAML::BeginMap;
        e << YAML::Key << "num_classes" << YAML::Value << cfg.synthetic.num_classes;
        e << YAML::Key << "size" << YAML::Value << cfg.synthetic.size;
        e << YAML::Key << "channels" << YAML::Value << cfg.synthetic.channels;
        e << YAML::Key << "seed" << YAML::Value << cfg.synthetic.seed;
        e << YAML::Key << "groups" << YAML::Value << YAML::BeginSeq;
        for (const auto& g : cfg.synthetic.groups) {
            e << YAML::Flow << YAML::BeginMap;
            e << YAML::Key << "train_count" << YAML::Value << g.train_count;
            e << YAML::Key << "val_count" << YAML::Value << g.val_count;
            e << YAML::Key << "signal" << YAML::Value << g.signal;
            e << YAML::Key << "noise" << YAML::Value << g.noise;
            e << YAML::Key << "tone" << YAML::Value << g.tone;
            e << YAML::Key << "mix" << YAML::Value << g.mix;
            e << YAML::EndMap;
        }
        e << YAML::EndSeq << YAML::EndMap;
    }

    e << YAML::Key << "surrogate" << YAML::Value << YAML::BeginMap;
    e << YAML::Key << "cap" << YAML::Value << cfg.surrogate.cap;
    e << YAML::Key << "noise_scale" << YAML::Value << cfg.surrogate.noise_scale;
    e << YAML::EndMap;
    if (cfg.fairness.privileged_group) {
        e << YAML::Key << "fairness" << YAML::Value << YAML::BeginMap;
        e << YAML::Key << "privileged_group" << YAML::Value << *cfg.fairness.privileged_group + 1;
        e << YAML::EndMap;
    }
    e << YAML::EndMap;
    return std::string(e.c_str()) + "\n";
}

}  // namespace biasless
