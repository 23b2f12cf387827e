#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

namespace biasless {

enum class BlockType : std::uint8_t { MB, DB, RB, CB, SKIP };

std::string_view to_string(BlockType type);
/// Throws SchemaError on an unknown name.
BlockType parse_block_type(std::string_view name);

/// One backbone slot. Ignored hyperparameters carry the sentinel 0: all three
/// for SKIP, `ch2` for DB.
struct BlockChoice {
    BlockType type = BlockType::SKIP;
    int ch2 = 0;
    int ch3 = 0;
    int kernel = 0;

    static BlockChoice skip() { return {}; }
    BlockChoice normalized() const;
    bool is_skip() const { return type == BlockType::SKIP; }
    bool uses_ch2() const { return type == BlockType::MB || type == BlockType::RB || type == BlockType::CB; }

    friend bool operator==(const BlockChoice&, const BlockChoice&) = default;
};

/// A child network backbone: a fixed-length linear array of blocks. A block's
/// input width (CH1) is derived, never stored.
struct ArchitectureEncoding {
    std::vector<BlockChoice> blocks;
    int stem_channels = 8;
    int num_classes = 2;

    /// Effective CH1 per block: CH3 of the nearest preceding non-SKIP block,
    /// or the stem width. SKIP slots report the width flowing through them.
    std::vector<int> input_channels() const;
    /// Width entering the classifier head.
    int output_channels() const;
    std::size_t active_blocks() const;
    /// Throws SchemaError if the encoding is structurally invalid.
    void validate() const;

    friend bool operator==(const ArchitectureEncoding&, const ArchitectureEncoding&) = default;
};

/// Per-group batch composition ratios o_1..o_K.
class BgmSpec {
public:
    static constexpr double kSumTolerance = 1e-9;

    /// Checks range and sum-to-one. Throws ConstraintError.
    explicit BgmSpec(std::vector<double> ratios);

    /// Like the constructor, plus the size-ordering rule: a group no larger
    /// than another never gets a larger share.
    static BgmSpec bind(std::vector<double> ratios, std::span<const std::size_t> group_sizes);
    /// o_i = |D_i| / Σ|D|.
    static BgmSpec proportional(std::span<const std::size_t> group_sizes);
    /// o_i = 1/K.
    static BgmSpec balanced(std::size_t groups);

    /// Throws ConstraintError naming the first offending (smaller, larger) pair.
    void check_ordering(std::span<const std::size_t> group_sizes) const;

    const std::vector<double>& ratios() const { return ratios_; }
    std::size_t groups() const { return ratios_.size(); }
    double operator[](std::size_t i) const { return ratios_[i]; }
    double max_ratio() const;

    friend bool operator==(const BgmSpec&, const BgmSpec&) = default;

private:
    std::vector<double> ratios_;
};

/// One entry of the BGM ratio grid, resolved against group sizes.
struct ProportionalRatio {
    friend bool operator==(const ProportionalRatio&, const ProportionalRatio&) = default;
};
/// Share of the smallest group; the remainder is split among the other groups
/// in proportion to their sizes.
struct MinorityFraction {
    double fraction = 0.5;
    friend bool operator==(const MinorityFraction&, const MinorityFraction&) = default;
};
/// A full assignment (normalized to sum one on resolution).
struct ExplicitRatios {
    std::vector<double> ratios;
    friend bool operator==(const ExplicitRatios&, const ExplicitRatios&) = default;
};
using RatioCandidate = std::variant<ProportionalRatio, MinorityFraction, ExplicitRatios>;

std::vector<RatioCandidate> default_ratio_grid();
/// Text form used by config files: "proportional", "0.25", or "0.75/0.25".
RatioCandidate parse_ratio_candidate(std::string_view text);
std::string to_string(const RatioCandidate& candidate);
/// Normalized assignment for the given group sizes. Throws ConstraintError
/// when the entry cannot be resolved (wrong arity, non-positive shares).
std::vector<double> resolve_ratio(const RatioCandidate& candidate,
                                  std::span<const std::size_t> group_sizes);

struct SearchSpaceConfig {
    std::size_t depth = 6;
    std::vector<BlockType> block_types = {BlockType::MB, BlockType::DB, BlockType::RB,
                                          BlockType::CB, BlockType::SKIP};
    std::vector<int> channels = {8, 16, 24};
    std::vector<int> kernels = {3, 5};
    std::vector<RatioCandidate> ratio_grid = default_ratio_grid();
    std::size_t groups = 2;
    int num_classes = 3;
    int input_channels = 3;
    int input_size = 8;
    int stem_channels = 8;

    /// Throws ConfigError.
    void validate() const;
};

enum class SlotKind : std::uint8_t { Ratio, Type, Ch2, Ch3, Kernel };

struct TokenSlot {
    SlotKind kind;
    std::size_t block;  // unused for Ratio
    std::size_t candidates;
};

/// Token layout: one ratio slot first, then (type, ch2, ch3, kernel) per block.
struct TokenSchema {
    std::vector<TokenSlot> slots;

    std::size_t length() const { return slots.size(); }
    std::vector<std::size_t> sizes() const;
    /// Stable digest of the layout; embedded in controller checkpoints.
    std::uint64_t hash() const;
};

/// A search-space point.
struct SearchPoint {
    BgmSpec bgm;
    ArchitectureEncoding arch;
};

/// The joint data/architecture space bound to concrete group sizes. Ratio
/// grid entries violating the ordering rule are dropped here, so every token
/// sequence in the schema decodes to a valid point.
class SearchSpace {
public:
    SearchSpace(SearchSpaceConfig cfg, std::vector<std::size_t> group_sizes);

    const SearchSpaceConfig& config() const { return cfg_; }
    const std::vector<std::size_t>& group_sizes() const { return group_sizes_; }
    const TokenSchema& schema() const { return schema_; }
    const std::vector<std::vector<double>>& ratio_candidates() const { return ratios_; }
    /// Distinct normalized choices for a single block slot.
    const std::vector<BlockChoice>& block_menu() const { return menu_; }

    /// Throws SchemaError on length mismatch or an out-of-range token.
    SearchPoint decode(std::span<const int> tokens) const;
    /// Normalized token sequence (ignored slots set to 0). Throws LookupError
    /// if the point is not representable in this space.
    std::vector<int> encode(const SearchPoint& point) const;
    /// Same as encode(decode(tokens)).
    std::vector<int> normalize(std::span<const int> tokens) const;

    /// Exact number of distinct valid points. Throws SizeError on overflow.
    std::uint64_t size() const;
    /// Visits every distinct point once, in a fixed order.
    void for_each(const std::function<void(const SearchPoint&)>& visit) const;

private:
    SearchSpaceConfig cfg_;
    std::vector<std::size_t> group_sizes_;
    std::vector<std::vector<double>> ratios_;
    std::vector<BlockChoice> menu_;
    TokenSchema schema_;
};

/// Free-function forms.
SearchPoint decode_tokens(std::span<const int> tokens, const SearchSpaceConfig& cfg,
                          std::span<const std::size_t> group_sizes);
std::uint64_t enumerate_space(const SearchSpaceConfig& cfg,
                              std::span<const std::size_t> group_sizes);

/// Named preset encodings: "all-CB", "all-MB", "all-RB", "all-DB",
/// "alt-RB-CB". Channels and kernel use the median candidate.
ArchitectureEncoding fixed_point(std::string_view name, const SearchSpaceConfig& cfg);
std::vector<std::string> fixed_point_names();

/// Canonical text: `blocks=[MB(ch2=16,ch3=24,k=3),SKIP,...];ratios=[0.5,0.5]`.
std::string to_text(const ArchitectureEncoding& arch);
std::string to_text(const SearchPoint& point);
std::string format_double(double value);

struct ParsedPoint {
    std::vector<BlockChoice> blocks;
    std::vector<double> ratios;
};
/// Inverse of to_text(SearchPoint). Throws SchemaError.
ParsedPoint parse_point_text(std::string_view text);
/// Builds a point from text, filling stem/num_classes from the config and
/// checking the ordering rule against the group sizes.
SearchPoint point_from_text(std::string_view text, const SearchSpaceConfig& cfg,
                            std::span<const std::size_t> group_sizes);

}  // namespace biasless
