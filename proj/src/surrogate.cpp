#include "biasless/surrogate.hpp"

#include "biasless/errors.hpp"
#include "biasless/seeding.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <sstream>

namespace biasless {

namespace {

constexpr double kPlantedAcc = 0.97;
constexpr double kMaxOtherAcc = 0.93;
constexpr double kMinGap = 0.02;

// Uniform in [-1, 1) from a hash.
double hashed_unit(std::uint64_t h) { return static_cast<double>(mix64(h) >> 11) * 0x1.0p-52 - 1.0; }

double round4(double v) { return std::round(v * 1e4) / 1e4; }

}  // namespace

void SurrogateTable::reindex() {
    index_.clear();
    for (std::size_t i = 0; i < entries.size(); ++i)
        if (!index_.emplace(entries[i].text, i).second) throw SchemaError("duplicate surrogate entry " + entries[i].text);
}

const SurrogateEntry* SurrogateTable::find(const std::string& text) const {
    const auto it = index_.find(text);
    return it == index_.end() ? nullptr : &entries[it->second];
}

std::size_t SurrogateTable::best_under(const RewardConfig& cfg) const {
    std::size_t best = 0;
    double best_r = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const auto rep = report_from_accuracies(entries[i].group_acc, group_sizes);
        const double r = compute_reward(rep, cfg);
        if (r > best_r) {
            best_r = r;
            best = i;
        }
    }
    return best;
}

SurrogateTable build_table(const SearchSpace& space, std::uint64_t seed, const SurrogateOptions& opts) {
    const auto total = space.size();
    if (total > opts.cap)
        throw SizeError("search space has " + std::to_string(total) + " points, above the surrogate cap of " +
                        std::to_string(opts.cap));
    if (!(opts.noise_scale >= 0.0)) throw ConfigError("surrogate: noise scale must be >= 0");

    SurrogateTable table;
    table.group_sizes = space.group_sizes();
    table.seed = seed;
    table.noise_scale = opts.noise_scale;
    std::vector<SearchPoint> points;
    points.reserve(static_cast<std::size_t>(total));
    space.for_each([&](const SearchPoint& p) { points.push_back(p); });

    const std::size_t planted = static_cast<std::size_t>(derive_seed(seed, "planted") % points.size());
    const auto target = space.encode(points[planted]);
    const std::size_t T = target.size();
    const std::size_t K = table.group_sizes.size();
    const std::size_t majority =
        static_cast<std::size_t>(std::max_element(table.group_sizes.begin(), table.group_sizes.end()) -
                                 table.group_sizes.begin());

    for (std::size_t i = 0; i < points.size(); ++i) {
        SurrogateEntry e;
        e.text = to_text(points[i]);
        if (i == planted) {
            e.group_acc.assign(K, kPlantedAcc);
        } else {
            const auto tokens = space.encode(points[i]);
            std::size_t agree = 0;
            for (std::size_t t = 0; t < T; ++t) agree += tokens[t] == target[t] ? 1 : 0;
            const double share = static_cast<double>(agree) / static_cast<double>(T);
            const std::uint64_t h = derive_seed(seed, e.text);
            const double acc = std::min(kMaxOtherAcc, 0.62 + 0.28 * share + 0.02 * hashed_unit(h));
            const double gap = std::max(kMinGap, 0.30 - 0.25 * share + 0.02 * hashed_unit(h + 1));
            e.group_acc.assign(K, 0.0);
            for (std::size_t g = 0; g < K; ++g)
                e.group_acc[g] = round4(g == majority ? acc : std::max(0.0, acc - gap));
        }
        table.entries.push_back(std::move(e));
    }
    table.planted = planted;
    table.reindex();
    return table;
}

EvalReport surrogate_evaluate(const SurrogateTable& table, const SearchPoint& point, std::uint64_t noise_seed,
                              const FairnessOptions& fairness) {
    const auto text = to_text(point);
    const auto* e = table.find(text);
    if (e == nullptr) throw LookupError("no surrogate entry for " + text);
    if (table.noise_scale == 0.0) return report_from_accuracies(e->group_acc, table.group_sizes, fairness);
    std::mt19937_64 rng(derive_seed(noise_seed, text));
    std::normal_distribution<double> dist(0.0, table.noise_scale);
    std::vector<double> acc = e->group_acc;
    for (auto& a : acc) a = std::clamp(a + dist(rng), 0.0, 1.0);
    return report_from_accuracies(acc, table.group_sizes, fairness);
}

void save_table_csv(const SurrogateTable& table, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot write surrogate table " + path.string());
    os << "encoding";
    for (std::size_t g = 0; g < table.group_sizes.size(); ++g) os << ",acc_g" << g + 1;
    os << '\n';
    for (const auto& e : table.entries) {
        os << '"' << e.text << '"';
        for (double a : e.group_acc) os << ',' << format_double(a);
        os << '\n';
    }
    if (!os) throw IoError("failed writing surrogate table " + path.string());
}

SurrogateTable load_table_csv(const std::filesystem::path& path, std::vector<std::size_t> group_sizes,
                              double noise_scale) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open surrogate table " + path.string());
    SurrogateTable table;
    table.group_sizes = std::move(group_sizes);
    table.noise_scale = noise_scale;
    std::string line;
    std::getline(is, line);
    std::size_t row = 1;
    std::optional<std::size_t> planted;
    while (std::getline(is, line)) {
        ++row;
        if (line.empty()) continue;
        const auto fail = [&](const std::string& why) {
            return IoError(path.string() + ":" + std::to_string(row) + ": " + why);
        };
        if (line.front() != '"') throw fail("encoding must be quoted");
        const auto close = line.find('"', 1);
        if (close == std::string::npos) throw fail("unterminated encoding");
        SurrogateEntry e;
        e.text = line.substr(1, close - 1);
        std::string_view rest(line);
        rest.remove_prefix(close + 1);
        while (!rest.empty()) {
            if (rest.front() != ',') throw fail("expected ','");
            rest.remove_prefix(1);
            const auto end = rest.find(',');
            const auto field = rest.substr(0, end);
            double v = 0.0;
            const auto res = std::from_chars(field.data(), field.data() + field.size(), v);
            if (res.ec != std::errc{} || res.ptr != field.data() + field.size()) throw fail("bad accuracy '" + std::string(field) + "'");
            if (!(v >= 0.0 && v <= 1.0)) throw fail("accuracy outside [0, 1]");
            e.group_acc.push_back(v);
            rest.remove_prefix(end == std::string_view::npos ? rest.size() : end);
        }
        if (e.group_acc.size() != table.group_sizes.size()) throw fail("expected one accuracy per group");
        if (std::adjacent_find(e.group_acc.begin(), e.group_acc.end(), std::not_equal_to<>()) == e.group_acc.end() &&
            e.group_acc.front() == kPlantedAcc)
            planted = table.entries.size();
        table.entries.push_back(std::move(e));
    }
    if (table.entries.empty()) throw IoError("surrogate table " + path.string() + " has no rows");
    table.planted = planted.value_or(0);
    table.reindex();
    return table;
}

}  // namespace biasless
