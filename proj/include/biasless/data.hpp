#pragma once

#include "biasless/nn.hpp"
#include "biasless/search_space.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace biasless {

enum class Split : std::uint8_t { Train, Validation };

std::string_view to_string(Split split);
Split parse_split(std::string_view text);

/// Labeled samples partitioned into sensitive groups. Features are stored
/// contiguously, one C×S×S block per sample.
struct GroupedDataset {
    InputShape shape;
    int num_classes = 2;
    std::size_t group_count = 1;
    Split split = Split::Train;
    std::vector<float> features;
    std::vector<int> labels;
    std::vector<int> groups;

    std::size_t size() const { return labels.size(); }
    std::size_t sample_volume() const {
        return static_cast<std::size_t>(shape.channels) * shape.height * shape.width;
    }
    std::span<const float> sample(std::size_t i) const {
        return {features.data() + i * sample_volume(), sample_volume()};
    }
    std::vector<std::size_t> group_sizes() const;
    std::vector<std::size_t> indices_of_group(std::size_t group) const;
    /// (n, C, H, W) tensor of the selected samples, in order.
    Tensor gather(std::span<const std::size_t> indices) const;
    /// Throws ConfigError if any invariant is broken.
    void validate() const;

    friend bool operator==(const GroupedDataset&, const GroupedDataset&) = default;
};

/// Generation profile for one sensitive group.
struct GroupProfile {
    std::size_t train_count = 100;
    std::size_t val_count = 100;
    /// Amplitude of the class motif (class-conditional mean shift).
    double signal = 1.0;
    /// Standard deviation of the additive pixel noise.
    double noise = 0.5;
    /// Additive per-channel offset ("skin tone").
    double tone = 0.0;
    /// Weight of a group-specific channel rotation applied to the motif; 0
    /// keeps the canonical appearance.
    double mix = 0.0;
};

struct SyntheticBiasConfig {
    std::vector<GroupProfile> groups;
    int num_classes = 3;
    int size = 8;
    int channels = 3;
    std::uint64_t seed = 0;

    /// Throws ConfigError.
    void validate() const;
};

/// Two groups, a large light-toned majority and a small dark-toned minority
/// whose class motifs are noisier, weaker and partially channel-rotated.
SyntheticBiasConfig default_synthetic_config(std::uint64_t seed = 0);

/// Class c is a 3×3 motif tiled over the image at a random phase, drawn
/// through the group's appearance (tone, channel rotation, amplitude, noise).
/// Deterministic under the seed.
std::pair<GroupedDataset, GroupedDataset> generate_synthetic(const SyntheticBiasConfig& cfg);

/// Per-batch group counts n_i for one BGM.
struct BatchPlan {
    std::size_t batch_size = 0;
    std::vector<std::size_t> per_group;
    std::uint64_t seed = 0;
    bool with_replacement = true;
};

/// n_i = round(o_i · BS) by largest remainder (ties to the lower group
/// index), then lifted to at least one for every group with o_i > 0.
std::vector<std::size_t> largest_remainder(std::span<const double> ratios, std::size_t total);
/// Throws PlanError if BS is smaller than the number of groups to draw from.
BatchPlan plan_batches(const BgmSpec& bgm, std::size_t batch_size, std::uint64_t seed);

struct Batch {
    std::vector<std::size_t> indices;  // dataset indices, grouped by group id
};

/// One epoch of batches. Each group is walked through a seeded permutation;
/// once exhausted it is resampled with replacement. The epoch length is the
/// smallest number of batches that visits every group at least once.
std::vector<Batch> make_batches(const GroupedDataset& ds, const BgmSpec& bgm, std::size_t batch_size,
                                std::uint64_t seed);

/// Manifest CSV, header lines `#shape=C,S,S`, `#groups=K`, `#classes=N`,
/// then a column header `id,group,label,split,path` and one row per sample.
/// Tensor paths are relative to `base_dir`; each holds C·S·S little-endian
/// float32 values. Rows whose split differs from `split` are skipped.
GroupedDataset load_dataset(const std::filesystem::path& base_dir, const std::filesystem::path& manifest,
                            Split split);
/// Writes tensors under `dir/tensors/` and a manifest at `dir/manifest.csv`.
std::filesystem::path save_dataset(const std::filesystem::path& dir, const GroupedDataset& train,
                                   const GroupedDataset& validation);

}  // namespace biasless
