#include "biasless/errors.hpp"
#include "biasless/search_space.hpp"

#include <doctest.h>

#include <optional>
#include <random>
#include <set>
#include <tuple>

using namespace biasless;

namespace {

SearchSpaceConfig tiny(std::size_t depth, std::vector<BlockType> types, std::vector<int> channels, std::vector<int> kernels) {
    SearchSpaceConfig c;
    c.depth = depth;
    c.block_types = std::move(types);
    c.channels = std::move(channels);
    c.kernels = std::move(kernels);
    c.ratio_grid = {ProportionalRatio{}};
    return c;
}

using BlockKey = std::tuple<int, int, int, int>;

// Independent count: walk the raw Cartesian product of (type, ch2, ch3, k)
// per slot, apply the sentinel rules by hand and deduplicate.
std::size_t brute_force_count(const SearchSpaceConfig& c) {
    std::set<BlockKey> menu;
    for (auto t : c.block_types)
        for (int a : c.channels)
            for (int b : c.channels)
                for (int k : c.kernels) {
                    if (t == BlockType::SKIP) menu.insert({static_cast<int>(t), 0, 0, 0});
                    else if (t == BlockType::DB) menu.insert({static_cast<int>(t), 0, b, k});
                    else menu.insert({static_cast<int>(t), a, b, k});
                }
    std::vector<BlockKey> items(menu.begin(), menu.end());
    std::set<std::vector<BlockKey>> archs;
    std::vector<std::size_t> idx(c.depth, 0);
    while (true) {
        std::vector<BlockKey> arch;
        bool any_active = false;
        for (auto i : idx) {
            arch.push_back(items[i]);
            any_active |= std::get<0>(items[i]) != static_cast<int>(BlockType::SKIP);
        }
        if (any_active) archs.insert(arch);
        std::size_t d = 0;
        while (d < idx.size() && ++idx[d] == items.size()) idx[d++] = 0;
        if (d == idx.size()) break;
    }
    return archs.size();
}

}  // namespace

TEST_CASE("space size for the smallest configurations") {
    const std::vector<std::size_t> sizes = {100, 100};
    CHECK(enumerate_space(tiny(1, {BlockType::CB}, {8}, {3}), sizes) == 1);
    CHECK(enumerate_space(tiny(2, {BlockType::CB, BlockType::SKIP}, {8}, {3}), sizes) == 3);
}

TEST_CASE("space size agrees with a filtered Cartesian product") {
    const std::vector<std::size_t> sizes = {100, 100};
    const auto cfg = tiny(2, {BlockType::MB, BlockType::DB, BlockType::RB, BlockType::CB, BlockType::SKIP}, {8, 16}, {3, 5});
    const SearchSpace space(cfg, sizes);
    const auto expected = brute_force_count(cfg);
    CHECK(space.size() == expected);

    std::set<std::string> seen;
    std::size_t visits = 0;
    space.for_each([&](const SearchPoint& p) {
        ++visits;
        seen.insert(to_text(p));
        const auto ch1 = p.arch.input_channels();
        int prev = p.arch.stem_channels;
        for (std::size_t i = 0; i < p.arch.blocks.size(); ++i) {
            CHECK(ch1[i] == prev);
            if (!p.arch.blocks[i].is_skip()) prev = p.arch.blocks[i].ch3;
        }
        CHECK(p.arch.active_blocks() >= 1);
    });
    CHECK(visits == expected);
    CHECK(seen.size() == expected);
}

TEST_CASE("ratio slot multiplies the space by the number of valid ratio entries") {
    auto cfg = tiny(2, {BlockType::CB, BlockType::SKIP}, {8}, {3});
    cfg.ratio_grid = default_ratio_grid();
    const std::vector<std::size_t> skewed = {900, 100};
    const SearchSpace space(cfg, skewed);
    CHECK(space.ratio_candidates().size() == 5);
    CHECK(space.size() == 15);
}

TEST_CASE("a single active block takes its input width from the stem") {
    const auto cfg = tiny(3, {BlockType::CB, BlockType::SKIP}, {16}, {3});
    const SearchSpace space(cfg, {50, 50});
    // Slot order: ratio, then (type, ch2, ch3, kernel) per block; CB=0, SKIP=1.
    const std::vector<int> tokens = {0, 1, 0, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0};
    const auto p = space.decode(tokens);
    CHECK(p.arch.active_blocks() == 1);
    CHECK(p.arch.input_channels()[1] == cfg.stem_channels);
    CHECK(p.arch.output_channels() == 16);
}

TEST_CASE("ordering rule on ratio assignments") {
    SUBCASE("equal shares are allowed for unequal groups") {
        const std::vector<std::size_t> sizes = {900, 100};
        const auto b = BgmSpec::bind({0.5, 0.5}, sizes);
        CHECK(b[0] == 0.5);
    }
    SUBCASE("the smaller group may not get the larger share") {
        const std::vector<std::size_t> sizes = {100, 900};
        CHECK_THROWS_AS(BgmSpec::bind({0.75, 0.25}, sizes), ConstraintError);
        try {
            BgmSpec::bind({0.75, 0.25}, sizes);
        } catch (const ConstraintError& e) {
            const std::string msg = e.what();
            CHECK(msg.find("1") != std::string::npos);
            CHECK(msg.find("2") != std::string::npos);
        }
    }
    SUBCASE("a grid with no valid entry is rejected when the space is built") {
        auto cfg = tiny(1, {BlockType::CB}, {8}, {3});
        cfg.ratio_grid = {ExplicitRatios{{0.75, 0.25}}};
        CHECK_THROWS_AS(SearchSpace(cfg, {100, 900}), ConstraintError);
        CHECK_THROWS_AS(decode_tokens(std::vector<int>{0, 0, 0, 0, 0}, cfg, std::vector<std::size_t>{100, 900}),
                        ConstraintError);
    }
    SUBCASE("equal group sizes admit any assignment") {
        const std::vector<std::size_t> sizes = {300, 300};
        CHECK_NOTHROW(BgmSpec::bind({0.8, 0.2}, sizes));
        CHECK_NOTHROW(BgmSpec::bind({0.2, 0.8}, sizes));
    }
}

TEST_CASE("BGM ratios must sum to one and lie in (0, 1]") {
    CHECK_THROWS_AS(BgmSpec({0.5, 0.6}), ConstraintError);
    CHECK_THROWS_AS(BgmSpec({1.0, 0.0}), ConstraintError);
    CHECK_NOTHROW(BgmSpec({0.3, 0.7}));
}

TEST_CASE("out-of-range and malformed token sequences") {
    const auto cfg = tiny(2, {BlockType::CB, BlockType::SKIP}, {8}, {3});
    const SearchSpace space(cfg, {10, 10});
    CHECK_THROWS_AS(space.decode(std::vector<int>{0, 0, 0, 0, 0}), SchemaError);
    CHECK_THROWS_AS(space.decode(std::vector<int>{0, 2, 0, 0, 0, 0, 0, 0, 0}), SchemaError);
    CHECK_THROWS_AS(space.decode(std::vector<int>{0, 1, 0, 0, 0, 1, 0, 0, 0}), SchemaError);
}

TEST_CASE("decode then encode is the identity on normalized tokens") {
    SearchSpaceConfig cfg;
    cfg.depth = 4;
    const SearchSpace space(cfg, {450, 50});
    const auto sizes = space.schema().sizes();
    std::mt19937_64 rng(5);
    int checked = 0;
    for (int i = 0; i < 2000; ++i) {
        std::vector<int> t(sizes.size());
        for (std::size_t s = 0; s < sizes.size(); ++s) t[s] = static_cast<int>(rng() % sizes[s]);
        std::optional<SearchPoint> decoded;
        try {
            decoded = space.decode(t);
        } catch (const SchemaError&) {
            continue;  // all-SKIP draw
        }
        const auto& p = *decoded;
        const auto n = space.encode(p);
        CHECK(space.decode(n).arch == p.arch);
        CHECK(space.normalize(n) == n);
        // Differences may only appear in slots the block ignores.
        for (std::size_t s = 0; s < t.size(); ++s)
            if (t[s] != n[s]) CHECK(n[s] == 0);
        ++checked;
    }
    CHECK(checked > 1900);
}

TEST_CASE("canonical text round-trips") {
    SearchSpaceConfig cfg;
    cfg.depth = 3;
    const std::vector<std::size_t> sizes = {450, 50};
    const SearchSpace space(cfg, sizes);
    const auto p = space.decode(std::vector<int>{2, 0, 1, 2, 0, 1, 0, 0, 1, 4, 0, 0, 0});
    const auto text = to_text(p);
    CHECK(text.rfind("blocks=[MB(ch2=16,ch3=24,k=3),DB(ch3=8,k=5),SKIP];ratios=[", 0) == 0);
    const auto q = point_from_text(text, cfg, sizes);
    CHECK(q.arch == p.arch);
    CHECK(q.bgm == p.bgm);
    CHECK_THROWS_AS(parse_point_text("blocks=[XX];ratios=[1]"), SchemaError);
}

TEST_CASE("named fixed points") {
    SearchSpaceConfig cfg;
    cfg.depth = 4;
    cfg.channels = {8, 16, 24};
    const auto cb = fixed_point("all-CB", cfg);
    for (const auto& b : cb.blocks) {
        CHECK(b.type == BlockType::CB);
        CHECK(b.ch3 == 16);
    }
    for (const auto& b : fixed_point("all-MB", cfg).blocks) CHECK(b.type == BlockType::MB);
    const auto alt = fixed_point("alt-RB-CB", cfg);
    CHECK(alt.blocks[0].type == BlockType::RB);
    CHECK(alt.blocks[1].type == BlockType::CB);
    CHECK(alt.blocks[2].type == BlockType::RB);
    CHECK_THROWS_AS(fixed_point("resnet", cfg), LookupError);
}

TEST_CASE("schema hash tracks the layout") {
    SearchSpaceConfig a;
    a.depth = 2;
    SearchSpaceConfig b = a;
    b.kernels = {3};
    const SearchSpace sa(a, {10, 10}), sb(b, {10, 10});
    CHECK(sa.schema().hash() == SearchSpace(a, {10, 10}).schema().hash());
    CHECK(sa.schema().hash() != sb.schema().hash());
}
