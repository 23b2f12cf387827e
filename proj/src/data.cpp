#include "biasless/data.hpp"

#include "biasless/errors.hpp"
#include "biasless/seeding.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

namespace biasless {

std::string_view to_string(Split split) { return split == Split::Train ? "train" : "val"; }

Split parse_split(std::string_view text) {
    if (text == "train") return Split::Train;
    if (text == "val" || text == "validation") return Split::Validation;
    throw ConfigError("unknown split '" + std::string(text) + "'");
}

// ---------------------------------------------------------------------------
// GroupedDataset

std::vector<std::size_t> GroupedDataset::group_sizes() const {
    std::vector<std::size_t> sizes(group_count, 0);
    for (int g : groups) ++sizes[static_cast<std::size_t>(g)];
    return sizes;
}

std::vector<std::size_t> GroupedDataset::indices_of_group(std::size_t group) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < groups.size(); ++i)
        if (static_cast<std::size_t>(groups[i]) == group) out.push_back(i);
    return out;
}

Tensor GroupedDataset::gather(std::span<const std::size_t> indices) const {
    const std::size_t vol = sample_volume();
    Tensor out({indices.size(), static_cast<std::size_t>(shape.channels), static_cast<std::size_t>(shape.height),
                static_cast<std::size_t>(shape.width)});
    for (std::size_t i = 0; i < indices.size(); ++i)
        std::memcpy(out.data.data() + i * vol, features.data() + indices[i] * vol, vol * sizeof(float));
    return out;
}

void GroupedDataset::validate() const {
    if (labels.size() != groups.size() || features.size() != labels.size() * sample_volume())
        throw ConfigError("dataset arrays have inconsistent lengths");
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= num_classes)
            throw ConfigError("sample " + std::to_string(i) + " has label outside [0, num_classes)");
        if (groups[i] < 0 || static_cast<std::size_t>(groups[i]) >= group_count)
            throw ConfigError("sample " + std::to_string(i) + " has group outside [0, K)");
    }
}

// ---------------------------------------------------------------------------
// Synthetic data

void SyntheticBiasConfig::validate() const {
    if (groups.empty()) throw ConfigError("synthetic config needs at least one group");
    if (num_classes < 2) throw ConfigError("synthetic config needs at least two classes");
    if (size <= 0 || channels <= 0) throw ConfigError("synthetic image shape must be positive");
    for (std::size_t g = 0; g < groups.size(); ++g) {
        const auto& p = groups[g];
        if (p.train_count < static_cast<std::size_t>(num_classes) || p.val_count < static_cast<std::size_t>(num_classes))
            throw ConfigError("group " + std::to_string(g + 1) + " has fewer samples than classes");
        if (!(p.noise > 0.0)) throw ConfigError("group " + std::to_string(g + 1) + " noise scale must be positive");
    }
}

SyntheticBiasConfig default_synthetic_config(std::uint64_t seed) {
    SyntheticBiasConfig cfg;
    cfg.num_classes = 3;
    cfg.size = 6;
    cfg.channels = 3;
    cfg.seed = seed;
    cfg.groups = {
        GroupProfile{450, 150, 1.0, 0.9, 0.3, 0.0},
        GroupProfile{50, 150, 0.8, 1.0, -0.3, 0.6},
    };
    return cfg;
}

namespace {

constexpr int kMotif = 3;

void fill_split(const SyntheticBiasConfig& cfg, const std::vector<std::vector<double>>& motifs, Split split,
                GroupedDataset& ds) {
    const int c_count = cfg.channels;
    const int s = cfg.size;
    const std::size_t vol = static_cast<std::size_t>(c_count) * s * s;
    for (std::size_t g = 0; g < cfg.groups.size(); ++g) {
        const auto& prof = cfg.groups[g];
        const std::size_t count = split == Split::Train ? prof.train_count : prof.val_count;
        std::mt19937_64 rng(derive_seed(cfg.seed, split == Split::Train ? "train" : "val", g));
        std::normal_distribution<double> gauss(0.0, 1.0);
        std::uniform_int_distribution<int> phase(0, kMotif - 1);
        for (std::size_t i = 0; i < count; ++i) {
            const int label = static_cast<int>(i % static_cast<std::size_t>(cfg.num_classes));
            const auto& motif = motifs[static_cast<std::size_t>(label)];
            const int dy = phase(rng);
            const int dx = phase(rng);
            const std::size_t base = ds.features.size();
            ds.features.resize(base + vol);
            for (int ch = 0; ch < c_count; ++ch) {
                const int rotated = (ch + 1) % c_count;
                const double tone_dir = c_count > 1 ? 1.0 - 0.6 * ch / (c_count - 1) : 1.0;
                for (int r = 0; r < s; ++r)
                    for (int col = 0; col < s; ++col) {
                        const std::size_t m = static_cast<std::size_t>(((r + dy) % kMotif) * kMotif + (col + dx) % kMotif);
                        const double own = motif[static_cast<std::size_t>(ch) * kMotif * kMotif + m];
                        const double other = motif[static_cast<std::size_t>(rotated) * kMotif * kMotif + m];
                        const double pattern = (1.0 - prof.mix) * own + prof.mix * other;
                        const double v = prof.tone * tone_dir + prof.signal * pattern + prof.noise * gauss(rng);
                        ds.features[base + (static_cast<std::size_t>(ch) * s + r) * s + col] = static_cast<float>(v);
                    }
            }
            ds.labels.push_back(label);
            ds.groups.push_back(static_cast<int>(g));
        }
    }
}

}  // namespace

std::pair<GroupedDataset, GroupedDataset> generate_synthetic(const SyntheticBiasConfig& cfg) {
    cfg.validate();
    // Class motifs with unit RMS, shared by both splits.
    std::vector<std::vector<double>> motifs(static_cast<std::size_t>(cfg.num_classes));
    for (std::size_t c = 0; c < motifs.size(); ++c) {
        std::mt19937_64 rng(derive_seed(cfg.seed, "motif", c));
        std::normal_distribution<double> gauss(0.0, 1.0);
        auto& m = motifs[c];
        m.resize(static_cast<std::size_t>(cfg.channels) * kMotif * kMotif);
        double sq = 0.0;
        for (auto& v : m) {
            v = gauss(rng);
            sq += v * v;
        }
        const double scale = 1.0 / std::sqrt(sq / static_cast<double>(m.size()));
        for (auto& v : m) v *= scale;
    }

    auto make = [&](Split split) {
        GroupedDataset ds;
        ds.shape = InputShape{cfg.channels, cfg.size, cfg.size};
        ds.num_classes = cfg.num_classes;
        ds.group_count = cfg.groups.size();
        ds.split = split;
        fill_split(cfg, motifs, split, ds);
        return ds;
    };
    return {make(Split::Train), make(Split::Validation)};
}

// ---------------------------------------------------------------------------
// Batching

std::vector<std::size_t> largest_remainder(std::span<const double> ratios, std::size_t total) {
    const std::size_t k = ratios.size();
    std::vector<std::size_t> counts(k, 0);
    std::vector<double> frac(k, 0.0);
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < k; ++i) {
        const double exact = ratios[i] * static_cast<double>(total);
        // Snap values within rounding noise of an integer.
        const double nearest = std::round(exact);
        const double v = std::abs(exact - nearest) < 1e-9 ? nearest : exact;
        counts[i] = static_cast<std::size_t>(std::floor(v));
        frac[i] = v - std::floor(v);
        assigned += counts[i];
    }
    std::vector<std::size_t> order(k);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return frac[a] > frac[b]; });
    for (std::size_t j = 0; assigned < total && j < k; ++j, ++assigned) ++counts[order[j]];

    if (total >= k) {
        for (std::size_t i = 0; i < k; ++i) {
            if (counts[i] > 0 || !(ratios[i] > 0.0)) continue;
            const auto donor = static_cast<std::size_t>(std::max_element(counts.begin(), counts.end()) - counts.begin());
            --counts[donor];
            ++counts[i];
        }
    }
    return counts;
}

BatchPlan plan_batches(const BgmSpec& bgm, std::size_t batch_size, std::uint64_t seed) {
    const auto active = static_cast<std::size_t>(
        std::count_if(bgm.ratios().begin(), bgm.ratios().end(), [](double o) { return o > 0.0; }));
    if (batch_size < active)
        throw PlanError("batch size " + std::to_string(batch_size) + " is smaller than the " + std::to_string(active) +
                        " groups it must draw from");
    return BatchPlan{batch_size, largest_remainder(bgm.ratios(), batch_size), seed, true};
}

std::vector<Batch> make_batches(const GroupedDataset& ds, const BgmSpec& bgm, std::size_t batch_size,
                                std::uint64_t seed) {
    if (bgm.groups() != ds.group_count)
        throw PlanError("BGM has " + std::to_string(bgm.groups()) + " ratios for a dataset with " +
                        std::to_string(ds.group_count) + " groups");
    const BatchPlan plan = plan_batches(bgm, batch_size, seed);
    const std::size_t k = ds.group_count;

    std::vector<std::vector<std::size_t>> members(k);
    for (std::size_t i = 0; i < ds.size(); ++i) members[static_cast<std::size_t>(ds.groups[i])].push_back(i);

    std::size_t batches = 0;
    for (std::size_t g = 0; g < k; ++g) {
        if (plan.per_group[g] == 0) continue;
        if (members[g].empty()) throw PlanError("group " + std::to_string(g + 1) + " has a share but no samples");
        batches = std::max(batches, (members[g].size() + plan.per_group[g] - 1) / plan.per_group[g]);
    }

    std::vector<Batch> out(batches);
    for (auto& b : out) b.indices.reserve(batch_size);
    for (std::size_t g = 0; g < k; ++g) {
        const std::size_t need = plan.per_group[g];
        if (need == 0) continue;
        std::mt19937_64 rng(derive_seed(seed, "group-stream", g));
        auto order = members[g];
        std::shuffle(order.begin(), order.end(), rng);
        std::uniform_int_distribution<std::size_t> pick(0, order.size() - 1);
        std::size_t cursor = 0;
        for (auto& b : out)
            for (std::size_t j = 0; j < need; ++j, ++cursor)
                b.indices.push_back(cursor < order.size() ? order[cursor] : members[g][pick(rng)]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Manifest ingestion

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream ss(line);
    while (std::getline(ss, cur, ',')) out.push_back(cur);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

template <class Int>
bool parse_int(const std::string& s, Int& out) {
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc{} && ptr == s.data() + s.size();
}

}  // namespace

GroupedDataset load_dataset(const std::filesystem::path& base_dir, const std::filesystem::path& manifest,
                            Split split) {
    using Kind = IngestionError::Kind;
    std::ifstream in(manifest);
    if (!in) throw IngestionError(Kind::MissingFile, 0, "cannot open manifest " + manifest.string());

    GroupedDataset ds;
    ds.split = split;
    bool have_shape = false, have_groups = false, have_classes = false, have_columns = false;
    std::string line;
    std::size_t row = 0;
    std::size_t samples_seen = 0;
    while (std::getline(in, line)) {
        ++row;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line[0] == '#') {
            const auto eq = line.find('=');
            if (eq == std::string::npos) continue;
            const std::string key = line.substr(1, eq - 1);
            const auto values = split_csv_line(line.substr(eq + 1));
            if (key == "shape") {
                if (values.size() != 3 || !parse_int(values[0], ds.shape.channels) ||
                    !parse_int(values[1], ds.shape.height) || !parse_int(values[2], ds.shape.width) ||
                    ds.shape.channels <= 0 || ds.shape.height <= 0 || ds.shape.width <= 0)
                    throw IngestionError(Kind::Malformed, row, "bad #shape header");
                have_shape = true;
            } else if (key == "groups") {
                if (values.size() != 1 || !parse_int(values[0], ds.group_count) || ds.group_count == 0)
                    throw IngestionError(Kind::Malformed, row, "bad #groups header");
                have_groups = true;
            } else if (key == "classes") {
                if (values.size() != 1 || !parse_int(values[0], ds.num_classes) || ds.num_classes < 1)
                    throw IngestionError(Kind::Malformed, row, "bad #classes header");
                have_classes = true;
            }
            continue;
        }
        if (!have_columns) {
            if (line != "id,group,label,split,path")
                throw IngestionError(Kind::Malformed, row, "expected column header 'id,group,label,split,path'");
            have_columns = true;
            continue;
        }
        if (!have_shape || !have_groups || !have_classes)
            throw IngestionError(Kind::Malformed, row, "missing #shape, #groups or #classes header");

        const auto cols = split_csv_line(line);
        if (cols.size() != 5) throw IngestionError(Kind::Malformed, row, "expected 5 columns");
        ++samples_seen;
        int group = 0, label = 0;
        if (!parse_int(cols[1], group) || group < 0 || static_cast<std::size_t>(group) >= ds.group_count)
            throw IngestionError(Kind::UnknownGroup, row, "unknown group index '" + cols[1] + "'");
        if (!parse_int(cols[2], label) || label < 0 || label >= ds.num_classes)
            throw IngestionError(Kind::UnknownLabel, row, "unknown label index '" + cols[2] + "'");
        Split row_split;
        try {
            row_split = parse_split(cols[3]);
        } catch (const ConfigError&) {
            throw IngestionError(Kind::Malformed, row, "unknown split '" + cols[3] + "'");
        }
        if (row_split != split) continue;

        const auto path = base_dir / cols[4];
        std::ifstream tensor(path, std::ios::binary | std::ios::ate);
        if (!tensor) throw IngestionError(Kind::MissingFile, row, "missing tensor file " + path.string());
        const auto bytes = static_cast<std::size_t>(tensor.tellg());
        const std::size_t vol = ds.sample_volume();
        if (bytes != vol * sizeof(float))
            throw IngestionError(Kind::ShapeMismatch, row,
                                 "tensor file " + path.string() + " holds " + std::to_string(bytes / sizeof(float)) +
                                     " values, header shape needs " + std::to_string(vol));
        tensor.seekg(0);
        const std::size_t base = ds.features.size();
        ds.features.resize(base + vol);
        // Stored little-endian; the supported targets are little-endian too.
        tensor.read(reinterpret_cast<char*>(ds.features.data() + base), static_cast<std::streamsize>(bytes));
        ds.labels.push_back(label);
        ds.groups.push_back(group);
    }
    if (samples_seen == 0 || ds.size() == 0) throw IngestionError(Kind::NoSamples, 0, "no samples in " + manifest.string());
    return ds;
}

std::filesystem::path save_dataset(const std::filesystem::path& dir, const GroupedDataset& train,
                                   const GroupedDataset& validation) {
    namespace fs = std::filesystem;
    if (!(train.shape == validation.shape) || train.group_count != validation.group_count ||
        train.num_classes != validation.num_classes)
        throw ConfigError("train and validation splits disagree on shape, groups or classes");
    std::error_code ec;
    fs::create_directories(dir / "tensors", ec);
    if (ec) throw IoError("cannot create " + (dir / "tensors").string() + ": " + ec.message());
    const auto manifest = dir / "manifest.csv";
    std::ofstream out(manifest);
    if (!out) throw IoError("cannot write " + manifest.string());
    out << "#shape=" << train.shape.channels << ',' << train.shape.height << ',' << train.shape.width << '\n'
        << "#groups=" << train.group_count << '\n'
        << "#classes=" << train.num_classes << '\n'
        << "id,group,label,split,path\n";
    std::size_t id = 0;
    for (const auto* ds : {&train, &validation}) {
        for (std::size_t i = 0; i < ds->size(); ++i, ++id) {
            const std::string rel = "tensors/" + std::to_string(id) + ".f32";
            std::ofstream t(dir / rel, std::ios::binary);
            const auto s = ds->sample(i);
            t.write(reinterpret_cast<const char*>(s.data()), static_cast<std::streamsize>(s.size_bytes()));
            if (!t) throw IoError("cannot write " + (dir / rel).string());
            out << id << ',' << ds->groups[i] << ',' << ds->labels[i] << ',' << to_string(ds->split) << ',' << rel
                << '\n';
        }
    }
    if (!out) throw IoError("cannot write " + manifest.string());
    return manifest;
}

}  // namespace biasless
