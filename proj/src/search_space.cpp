#include "biasless/search_space.hpp"

#include "biasless/errors.hpp"
#include "biasless/seeding.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <numeric>
#include <sstream>

namespace biasless {

namespace {

constexpr std::array<std::string_view, 5> kBlockNames = {"MB", "DB", "RB", "CB", "SKIP"};

std::size_t index_of(std::span<const int> values, int value) {
    auto it = std::find(values.begin(), values.end(), value);
    return it == values.end() ? values.size() : static_cast<std::size_t>(it - values.begin());
}

std::uint64_t checked_mul(std::uint64_t a, std::uint64_t b) {
    std::uint64_t out = 0;
    if (__builtin_mul_overflow(a, b, &out)) throw SizeError("search space size overflows 64 bits");
    return out;
}

std::size_t smallest_group(std::span<const std::size_t> sizes) {
    return static_cast<std::size_t>(std::min_element(sizes.begin(), sizes.end()) - sizes.begin());
}

int median_of(std::vector<int> values) {
    std::sort(values.begin(), values.end());
    return values[(values.size() - 1) / 2];
}

}  // namespace

std::string_view to_string(BlockType type) { return kBlockNames[static_cast<std::size_t>(type)]; }

BlockType parse_block_type(std::string_view name) {
    for (std::size_t i = 0; i < kBlockNames.size(); ++i)
        if (kBlockNames[i] == name) return static_cast<BlockType>(i);
    throw SchemaError("unknown block type '" + std::string(name) + "'");
}

BlockChoice BlockChoice::normalized() const {
    BlockChoice out = *this;
    if (out.type == BlockType::SKIP) return skip();
    if (out.type == BlockType::DB) out.ch2 = 0;
    return out;
}

// ---------------------------------------------------------------------------
// ArchitectureEncoding

std::vector<int> ArchitectureEncoding::input_channels() const {
    std::vector<int> out;
    out.reserve(blocks.size());
    int width = stem_channels;
    for (const auto& block : blocks) {
        out.push_back(width);
        if (!block.is_skip()) width = block.ch3;
    }
    return out;
}

int ArchitectureEncoding::output_channels() const {
    int width = stem_channels;
    for (const auto& block : blocks)
        if (!block.is_skip()) width = block.ch3;
    return width;
}

std::size_t ArchitectureEncoding::active_blocks() const {
    return static_cast<std::size_t>(
        std::count_if(blocks.begin(), blocks.end(), [](const BlockChoice& b) { return !b.is_skip(); }));
}

void ArchitectureEncoding::validate() const {
    if (stem_channels <= 0) throw SchemaError("stem_channels must be positive");
    if (num_classes <= 0) throw SchemaError("num_classes must be positive");
    if (active_blocks() == 0) throw SchemaError("encoding has no non-SKIP block");
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        const auto& b = blocks[i];
        if (b.is_skip()) continue;
        if (b.ch3 <= 0 || (b.uses_ch2() && b.ch2 <= 0))
            throw SchemaError("block " + std::to_string(i) + " has a non-positive channel count");
        if (b.kernel <= 0 || b.kernel % 2 == 0)
            throw SchemaError("block " + std::to_string(i) + " kernel must be a positive odd size");
    }
}

// ---------------------------------------------------------------------------
// BgmSpec

BgmSpec::BgmSpec(std::vector<double> ratios) : ratios_(std::move(ratios)) {
    if (ratios_.empty()) throw ConstraintError("BGM needs at least one group ratio");
    double sum = 0.0;
    for (std::size_t i = 0; i < ratios_.size(); ++i) {
        const double o = ratios_[i];
        if (!(o > 0.0 && o <= 1.0))
            throw ConstraintError("ratio o_" + std::to_string(i + 1) + " = " + format_double(o) +
                                  " is outside (0, 1]");
        sum += o;
    }
    if (std::abs(sum - 1.0) > kSumTolerance)
        throw ConstraintError("BGM ratios sum to " + format_double(sum) + ", expected 1");
}

BgmSpec BgmSpec::bind(std::vector<double> ratios, std::span<const std::size_t> group_sizes) {
    BgmSpec spec(std::move(ratios));
    spec.check_ordering(group_sizes);
    return spec;
}

BgmSpec BgmSpec::proportional(std::span<const std::size_t> group_sizes) {
    return BgmSpec(resolve_ratio(ProportionalRatio{}, group_sizes));
}

BgmSpec BgmSpec::balanced(std::size_t groups) {
    if (groups == 0) throw ConstraintError("BGM needs at least one group ratio");
    return BgmSpec(std::vector<double>(groups, 1.0 / static_cast<double>(groups)));
}

void BgmSpec::check_ordering(std::span<const std::size_t> group_sizes) const {
    if (group_sizes.size() != ratios_.size())
        throw ConstraintError("BGM has " + std::to_string(ratios_.size()) + " ratios but dataset has " +
                              std::to_string(group_sizes.size()) + " groups");
    for (std::size_t i = 0; i < ratios_.size(); ++i)
        for (std::size_t j = 0; j < ratios_.size(); ++j)
            if (group_sizes[i] < group_sizes[j] && ratios_[i] > ratios_[j])
                throw ConstraintError("ordering violated for groups (" + std::to_string(i + 1) + ", " +
                                      std::to_string(j + 1) + "): o_" + std::to_string(i + 1) + "=" +
                                      format_double(ratios_[i]) + " > o_" + std::to_string(j + 1) + "=" +
                                      format_double(ratios_[j]) + " while |D_" + std::to_string(i + 1) +
                                      "|=" + std::to_string(group_sizes[i]) + " < |D_" +
                                      std::to_string(j + 1) + "|=" + std::to_string(group_sizes[j]));
}

double BgmSpec::max_ratio() const { return *std::max_element(ratios_.begin(), ratios_.end()); }

// ---------------------------------------------------------------------------
// Ratio grid

std::vector<RatioCandidate> default_ratio_grid() {
    return {ProportionalRatio{}, MinorityFraction{0.125}, MinorityFraction{0.25}, MinorityFraction{0.375},
            MinorityFraction{0.5}};
}

RatioCandidate parse_ratio_candidate(std::string_view text) {
    auto parse = [&](std::string_view part) {
        double v = 0.0;
        auto [ptr, ec] = std::from_chars(part.data(), part.data() + part.size(), v);
        if (ec != std::errc{} || ptr != part.data() + part.size())
            throw ConfigError("bad ratio grid entry '" + std::string(text) + "'");
        return v;
    };
    if (text == "proportional") return ProportionalRatio{};
    if (text.find('/') == std::string_view::npos) return MinorityFraction{parse(text)};
    ExplicitRatios out;
    std::size_t start = 0;
    while (true) {
        const auto slash = text.find('/', start);
        out.ratios.push_back(parse(text.substr(start, slash - start)));
        if (slash == std::string_view::npos) break;
        start = slash + 1;
    }
    return out;
}

std::string to_string(const RatioCandidate& candidate) {
    if (std::holds_alternative<ProportionalRatio>(candidate)) return "proportional";
    if (const auto* m = std::get_if<MinorityFraction>(&candidate)) return format_double(m->fraction);
    std::string out;
    for (double r : std::get<ExplicitRatios>(candidate).ratios) {
        if (!out.empty()) out += '/';
        out += format_double(r);
    }
    return out;
}

std::vector<double> resolve_ratio(const RatioCandidate& candidate, std::span<const std::size_t> group_sizes) {
    const std::size_t k = group_sizes.size();
    if (k == 0) throw ConstraintError("cannot resolve a ratio without groups");
    const double total = std::accumulate(group_sizes.begin(), group_sizes.end(), 0.0,
                                         [](double acc, std::size_t n) { return acc + static_cast<double>(n); });
    if (total <= 0.0) throw ConstraintError("all groups are empty");

    std::vector<double> out(k);
    if (std::holds_alternative<ProportionalRatio>(candidate)) {
        for (std::size_t i = 0; i < k; ++i) out[i] = static_cast<double>(group_sizes[i]) / total;
    } else if (const auto* m = std::get_if<MinorityFraction>(&candidate)) {
        if (k == 1) return {1.0};
        if (!(m->fraction > 0.0 && m->fraction < 1.0))
            throw ConstraintError("minority fraction " + format_double(m->fraction) + " is outside (0, 1)");
        const std::size_t minority = smallest_group(group_sizes);
        const double rest = total - static_cast<double>(group_sizes[minority]);
        for (std::size_t i = 0; i < k; ++i)
            out[i] = i == minority ? m->fraction
                                   : (1.0 - m->fraction) * static_cast<double>(group_sizes[i]) / rest;
    } else {
        const auto& raw = std::get<ExplicitRatios>(candidate).ratios;
        if (raw.size() != k)
            throw ConstraintError("ratio entry has " + std::to_string(raw.size()) + " shares for " +
                                  std::to_string(k) + " groups");
        const double sum = std::accumulate(raw.begin(), raw.end(), 0.0);
        for (std::size_t i = 0; i < k; ++i) {
            if (!(raw[i] > 0.0)) throw ConstraintError("ratio shares must be positive");
            out[i] = raw[i] / sum;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Config and schema

void SearchSpaceConfig::validate() const {
    auto fail = [](const std::string& msg) { throw ConfigError("search space: " + msg); };
    if (depth == 0) fail("depth must be >= 1");
    if (block_types.empty()) fail("block type list is empty");
    if (channels.empty()) fail("channel candidate list is empty");
    if (kernels.empty()) fail("kernel candidate list is empty");
    if (ratio_grid.empty()) fail("ratio grid is empty");
    if (groups == 0) fail("group count must be >= 1");
    if (num_classes < 2) fail("num_classes must be >= 2");
    if (input_channels <= 0 || input_size <= 0 || stem_channels <= 0) fail("input shape must be positive");
    for (int c : channels)
        if (c <= 0) fail("channel candidates must be positive");
    for (int k : kernels)
        if (k <= 0 || k % 2 == 0) fail("kernel candidates must be positive odd sizes");
    auto sorted = block_types;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) fail("duplicate block type");
    if (sorted == std::vector<BlockType>{BlockType::SKIP}) fail("block types must include a non-SKIP type");
}

std::vector<std::size_t> TokenSchema::sizes() const {
    std::vector<std::size_t> out;
    out.reserve(slots.size());
    for (const auto& s : slots) out.push_back(s.candidates);
    return out;
}

std::uint64_t TokenSchema::hash() const {
    std::uint64_t h = fnv1a("biasless-token-schema");
    for (const auto& s : slots) {
        h = mix64(h ^ static_cast<std::uint64_t>(s.kind));
        h = mix64(h ^ s.block);
        h = mix64(h ^ s.candidates);
    }
    return h;
}

SearchSpace::SearchSpace(SearchSpaceConfig cfg, std::vector<std::size_t> group_sizes)
    : cfg_(std::move(cfg)), group_sizes_(std::move(group_sizes)) {
    cfg_.validate();
    if (group_sizes_.size() != cfg_.groups)
        throw ConfigError("search space expects " + std::to_string(cfg_.groups) + " groups, got " +
                          std::to_string(group_sizes_.size()) + " group sizes");

    // Valid ratio assignments, deduplicated, in grid order.
    std::string first_violation;
    for (const auto& candidate : cfg_.ratio_grid) {
        auto resolved = resolve_ratio(candidate, group_sizes_);
        try {
            BgmSpec::bind(resolved, group_sizes_);
        } catch (const ConstraintError& e) {
            if (first_violation.empty()) first_violation = e.what();
            continue;
        }
        const bool duplicate = std::any_of(ratios_.begin(), ratios_.end(), [&](const auto& existing) {
            for (std::size_t i = 0; i < existing.size(); ++i)
                if (std::abs(existing[i] - resolved[i]) > 1e-12) return false;
            return true;
        });
        if (!duplicate) ratios_.push_back(std::move(resolved));
    }
    if (ratios_.empty()) throw ConstraintError("no ratio grid entry is valid: " + first_violation);

    for (BlockType type : cfg_.block_types) {
        if (type == BlockType::SKIP) {
            menu_.push_back(BlockChoice::skip());
            continue;
        }
        const std::vector<int> ch2s = type == BlockType::DB ? std::vector<int>{0} : cfg_.channels;
        for (int ch2 : ch2s)
            for (int ch3 : cfg_.channels)
                for (int k : cfg_.kernels) menu_.push_back(BlockChoice{type, ch2, ch3, k});
    }

    schema_.slots.push_back({SlotKind::Ratio, 0, ratios_.size()});
    for (std::size_t b = 0; b < cfg_.depth; ++b) {
        schema_.slots.push_back({SlotKind::Type, b, cfg_.block_types.size()});
        schema_.slots.push_back({SlotKind::Ch2, b, cfg_.channels.size()});
        schema_.slots.push_back({SlotKind::Ch3, b, cfg_.channels.size()});
        schema_.slots.push_back({SlotKind::Kernel, b, cfg_.kernels.size()});
    }
}

SearchPoint SearchSpace::decode(std::span<const int> tokens) const {
    if (tokens.size() != schema_.length())
        throw SchemaError("token sequence has length " + std::to_string(tokens.size()) + ", schema expects " +
                          std::to_string(schema_.length()));
    for (std::size_t t = 0; t < tokens.size(); ++t)
        if (tokens[t] < 0 || static_cast<std::size_t>(tokens[t]) >= schema_.slots[t].candidates)
            throw SchemaError("token " + std::to_string(tokens[t]) + " at position " + std::to_string(t) +
                              " is outside [0, " + std::to_string(schema_.slots[t].candidates) + ")");

    ArchitectureEncoding arch;
    arch.stem_channels = cfg_.stem_channels;
    arch.num_classes = cfg_.num_classes;
    arch.blocks.reserve(cfg_.depth);
    for (std::size_t b = 0; b < cfg_.depth; ++b) {
        const std::size_t base = 1 + 4 * b;
        BlockChoice choice{cfg_.block_types[static_cast<std::size_t>(tokens[base])],
                           cfg_.channels[static_cast<std::size_t>(tokens[base + 1])],
                           cfg_.channels[static_cast<std::size_t>(tokens[base + 2])],
                           cfg_.kernels[static_cast<std::size_t>(tokens[base + 3])]};
        arch.blocks.push_back(choice.normalized());
    }
    arch.validate();
    return {BgmSpec(ratios_[static_cast<std::size_t>(tokens[0])]), std::move(arch)};
}

std::vector<int> SearchSpace::encode(const SearchPoint& point) const {
    std::vector<int> tokens(schema_.length(), 0);
    const auto& r = point.bgm.ratios();
    auto match = std::find_if(ratios_.begin(), ratios_.end(), [&](const auto& candidate) {
        if (candidate.size() != r.size()) return false;
        for (std::size_t i = 0; i < r.size(); ++i)
            if (std::abs(candidate[i] - r[i]) > 1e-12) return false;
        return true;
    });
    if (match == ratios_.end()) throw LookupError("BGM ratios are not in the ratio grid");
    tokens[0] = static_cast<int>(match - ratios_.begin());

    if (point.arch.blocks.size() != cfg_.depth) throw LookupError("encoding depth does not match the space");
    if (point.arch.stem_channels != cfg_.stem_channels || point.arch.num_classes != cfg_.num_classes)
        throw LookupError("encoding stem/head do not match the space");
    for (std::size_t b = 0; b < cfg_.depth; ++b) {
        const BlockChoice choice = point.arch.blocks[b].normalized();
        const std::size_t base = 1 + 4 * b;
        auto type_it = std::find(cfg_.block_types.begin(), cfg_.block_types.end(), choice.type);
        if (type_it == cfg_.block_types.end()) throw LookupError("block type not in the space");
        tokens[base] = static_cast<int>(type_it - cfg_.block_types.begin());
        if (choice.is_skip()) continue;
        if (choice.uses_ch2()) {
            const auto i = index_of(cfg_.channels, choice.ch2);
            if (i == cfg_.channels.size()) throw LookupError("ch2 not in channel candidates");
            tokens[base + 1] = static_cast<int>(i);
        }
        const auto i3 = index_of(cfg_.channels, choice.ch3);
        const auto ik = index_of(cfg_.kernels, choice.kernel);
        if (i3 == cfg_.channels.size()) throw LookupError("ch3 not in channel candidates");
        if (ik == cfg_.kernels.size()) throw LookupError("kernel not in kernel candidates");
        tokens[base + 2] = static_cast<int>(i3);
        tokens[base + 3] = static_cast<int>(ik);
    }
    return tokens;
}

std::vector<int> SearchSpace::normalize(std::span<const int> tokens) const { return encode(decode(tokens)); }

std::uint64_t SearchSpace::size() const {
    const bool has_skip =
        std::find(cfg_.block_types.begin(), cfg_.block_types.end(), BlockType::SKIP) != cfg_.block_types.end();
    std::uint64_t sequences = 1;
    for (std::size_t b = 0; b < cfg_.depth; ++b) sequences = checked_mul(sequences, menu_.size());
    if (has_skip) sequences -= 1;
    return checked_mul(sequences, ratios_.size());
}

void SearchSpace::for_each(const std::function<void(const SearchPoint&)>& visit) const {
    const std::size_t depth = cfg_.depth;
    std::vector<std::size_t> digits(depth, 0);
    ArchitectureEncoding arch;
    arch.stem_channels = cfg_.stem_channels;
    arch.num_classes = cfg_.num_classes;
    arch.blocks.resize(depth);
    for (const auto& ratio : ratios_) {
        const BgmSpec bgm(ratio);
        std::fill(digits.begin(), digits.end(), 0);
        while (true) {
            for (std::size_t b = 0; b < depth; ++b) arch.blocks[b] = menu_[digits[b]];
            if (arch.active_blocks() > 0) visit(SearchPoint{bgm, arch});
            std::size_t carried = 0;
            while (carried < depth) {
                auto& d = digits[depth - 1 - carried];
                if (++d < menu_.size()) break;
                d = 0;
                ++carried;
            }
            if (carried == depth) break;
        }
    }
}

SearchPoint decode_tokens(std::span<const int> tokens, const SearchSpaceConfig& cfg,
                          std::span<const std::size_t> group_sizes) {
    return SearchSpace(cfg, {group_sizes.begin(), group_sizes.end()}).decode(tokens);
}

std::uint64_t enumerate_space(const SearchSpaceConfig& cfg, std::span<const std::size_t> group_sizes) {
    return SearchSpace(cfg, {group_sizes.begin(), group_sizes.end()}).size();
}

// ---------------------------------------------------------------------------
// Presets

std::vector<std::string> fixed_point_names() { return {"all-CB", "all-MB", "all-RB", "all-DB", "alt-RB-CB"}; }

ArchitectureEncoding fixed_point(std::string_view name, const SearchSpaceConfig& cfg) {
    cfg.validate();
    const int ch = median_of(cfg.channels);
    const int k = median_of(cfg.kernels);
    auto uniform = [&](BlockType type) {
        ArchitectureEncoding enc;
        enc.stem_channels = cfg.stem_channels;
        enc.num_classes = cfg.num_classes;
        enc.blocks.assign(cfg.depth, BlockChoice{type, ch, ch, k}.normalized());
        return enc;
    };
    if (name == "all-CB") return uniform(BlockType::CB);
    if (name == "all-MB") return uniform(BlockType::MB);
    if (name == "all-RB") return uniform(BlockType::RB);
    if (name == "all-DB") return uniform(BlockType::DB);
    if (name == "alt-RB-CB") {
        auto enc = uniform(BlockType::RB);
        for (std::size_t i = 1; i < enc.blocks.size(); i += 2) enc.blocks[i].type = BlockType::CB;
        return enc;
    }
    throw LookupError("unknown fixed point '" + std::string(name) + "'");
}

// ---------------------------------------------------------------------------
// Text form

std::string format_double(double value) {
    std::array<char, 32> buf{};
    auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value);
    return std::string(buf.data(), ptr);
}

std::string to_text(const ArchitectureEncoding& arch) {
    std::string out = "blocks=[";
    for (std::size_t i = 0; i < arch.blocks.size(); ++i) {
        const auto b = arch.blocks[i].normalized();
        if (i) out += ',';
        out += to_string(b.type);
        if (b.is_skip()) continue;
        out += '(';
        if (b.uses_ch2()) out += "ch2=" + std::to_string(b.ch2) + ',';
        out += "ch3=" + std::to_string(b.ch3) + ",k=" + std::to_string(b.kernel) + ')';
    }
    return out + ']';
}

std::string to_text(const SearchPoint& point) {
    std::string out = to_text(point.arch) + ";ratios=[";
    const auto& r = point.bgm.ratios();
    for (std::size_t i = 0; i < r.size(); ++i) {
        if (i) out += ',';
        out += format_double(r[i]);
    }
    return out + ']';
}

ParsedPoint parse_point_text(std::string_view text) {
    auto fail = [&](const std::string& why) -> SchemaError {
        return SchemaError("cannot parse point text '" + std::string(text) + "': " + why);
    };
    auto parse_int = [&](std::string_view s) {
        int v = 0;
        auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (ec != std::errc{} || ptr != s.data() + s.size()) throw fail("bad integer '" + std::string(s) + "'");
        return v;
    };

    constexpr std::string_view kBlocks = "blocks=[";
    constexpr std::string_view kRatios = "];ratios=[";
    if (!text.starts_with(kBlocks) || !text.ends_with("]")) throw fail("missing blocks/ratios sections");
    const auto split = text.find(kRatios);
    if (split == std::string_view::npos) throw fail("missing ratios section");

    ParsedPoint out;
    std::string_view blocks = text.substr(kBlocks.size(), split - kBlocks.size());
    while (!blocks.empty()) {
        std::string_view item;
        const auto paren = blocks.find('(');
        const auto comma = blocks.find(',');
        if (paren != std::string_view::npos && (comma == std::string_view::npos || paren < comma)) {
            const auto close = blocks.find(')', paren);
            if (close == std::string_view::npos) throw fail("unbalanced parenthesis");
            item = blocks.substr(0, close + 1);
            blocks.remove_prefix(std::min(blocks.size(), close + 2));
        } else {
            item = blocks.substr(0, comma);
            blocks.remove_prefix(comma == std::string_view::npos ? blocks.size() : comma + 1);
        }
        BlockChoice choice;
        const auto open = item.find('(');
        choice.type = parse_block_type(item.substr(0, open));
        if (open != std::string_view::npos) {
            std::string_view args = item.substr(open + 1, item.size() - open - 2);
            while (!args.empty()) {
                const auto c = args.find(',');
                const std::string_view kv = args.substr(0, c);
                args.remove_prefix(c == std::string_view::npos ? args.size() : c + 1);
                const auto eq = kv.find('=');
                if (eq == std::string_view::npos) throw fail("expected key=value");
                const auto key = kv.substr(0, eq);
                const int value = parse_int(kv.substr(eq + 1));
                if (key == "ch2") choice.ch2 = value;
                else if (key == "ch3") choice.ch3 = value;
                else if (key == "k") choice.kernel = value;
                else throw fail("unknown block field '" + std::string(key) + "'");
            }
        }
        out.blocks.push_back(choice.normalized());
    }

    std::string_view ratios = text.substr(split + kRatios.size());
    ratios.remove_suffix(1);
    while (!ratios.empty()) {
        const auto c = ratios.find(',');
        const auto part = ratios.substr(0, c);
        double v = 0.0;
        auto [ptr, ec] = std::from_chars(part.data(), part.data() + part.size(), v);
        if (ec != std::errc{} || ptr != part.data() + part.size()) throw fail("bad ratio '" + std::string(part) + "'");
        out.ratios.push_back(v);
        ratios.remove_prefix(c == std::string_view::npos ? ratios.size() : c + 1);
    }
    if (out.blocks.empty() || out.ratios.empty()) throw fail("empty section");
    return out;
}

SearchPoint point_from_text(std::string_view text, const SearchSpaceConfig& cfg,
                            std::span<const std::size_t> group_sizes) {
    auto parsed = parse_point_text(text);
    ArchitectureEncoding arch;
    arch.blocks = std::move(parsed.blocks);
    arch.stem_channels = cfg.stem_channels;
    arch.num_classes = cfg.num_classes;
    arch.validate();
    return {BgmSpec::bind(std::move(parsed.ratios), group_sizes), std::move(arch)};
}

}  // namespace biasless
