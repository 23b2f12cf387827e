#pragma once

#include "biasless/controller.hpp"
#include "biasless/data.hpp"
#include "biasless/evaluator.hpp"
#include "biasless/search_space.hpp"
#include "biasless/surrogate.hpp"
#include "biasless/trainer.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace biasless {

enum class Mode : std::uint8_t { Search, TrainOne, Evaluate, SurrogateSearch, Ablation };

std::string_view to_string(Mode mode);
Mode parse_mode(std::string_view text);

/// Everything one CLI invocation needs. Sub-configs keep their own
/// validation; validate() also checks the cross-field rules.
struct ExperimentConfig {
    Mode mode = Mode::Search;
    SearchSpaceConfig space;
    RewardConfig reward;
    ReinforceConfig reinforce;
    TrainConfig train;
    SyntheticBiasConfig synthetic = default_synthetic_config();
    /// When set, data come from this manifest instead of the generator.
    std::optional<std::filesystem::path> manifest;
    std::vector<std::uint64_t> seeds = {0};
    std::filesystem::path output_dir = "runs";

    /// Controller updates per search.
    std::size_t updates = 200;
    std::size_t controller_hidden = 32;
    /// Children trained concurrently inside one update.
    std::size_t workers = 1;
    /// Reuse (point → outcome) results within a search.
    bool cache_children = true;
    bool resume = true;

    SurrogateOptions surrogate;
    /// Optional pre-built surrogate table for surrogate-search.
    std::optional<std::filesystem::path> surrogate_table;
    FairnessOptions fairness;

    /// train-one: point text or a fixed-point name; ratio for fixed points.
    std::string point = "all-MB";
    std::string ratio = "proportional";
    /// evaluate: network snapshot to score.
    std::optional<std::filesystem::path> snapshot;
    /// ablation: backbone used by the fixed-architecture arms.
    std::string fixed_arch = "all-MB";

    /// Throws ConfigError.
    void validate() const;
};

/// Named presets: "fair", "acc", "fat", "desk", "smoke".
void apply_preset(ExperimentConfig& cfg, std::string_view name);
std::vector<std::string> preset_names();

/// Overlays a YAML document onto `cfg`; unknown keys are errors. Throws
/// ConfigError (IoError when the file cannot be read).
void apply_yaml_file(ExperimentConfig& cfg, const std::filesystem::path& path);
void apply_yaml_text(ExperimentConfig& cfg, const std::string& text);

/// Canonical YAML dump of the effective config (written next to results).
std::string to_yaml(const ExperimentConfig& cfg);

}  // namespace biasless
