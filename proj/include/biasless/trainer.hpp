#pragma once

#include "biasless/data.hpp"
#include "biasless/nn.hpp"
#include "biasless/search_space.hpp"

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace biasless {

/// Fair: each sample is weighted by max_j(o_j) / o_group. Plain: every
/// weight is 1 (ordinary summed cross-entropy).
enum class LossMode : std::uint8_t { Fair, Plain };

std::string_view to_string(LossMode mode);
LossMode parse_loss_mode(std::string_view text);

struct TrainConfig {
    int epochs = 30;
    std::size_t batch_size = 32;
    double learning_rate = 0.003;
    double lr_decay = 0.9;
    /// lr is multiplied by lr_decay every decay_interval optimizer steps.
    std::size_t decay_interval = 20;
    std::uint64_t seed = 0;
    LossMode loss = LossMode::Fair;
    /// Divide the summed loss by the batch size.
    bool mean_loss = false;

    /// Throws ConfigError.
    void validate(std::size_t groups) const;
};

/// lr_0 · decay^floor(step / interval).
double learning_rate_at(const TrainConfig& cfg, std::size_t step);

struct FairLossReport {
    double loss = 0.0;
    std::vector<double> group_loss;  // summed weighted loss per group
    std::vector<double> weights;     // per sample
};

struct FairLossResult {
    FairLossReport report;
    Tensor grad;  // d loss / d logits
};

/// Weighted cross-entropy over a batch. Probabilities are clamped at 1e-12
/// before the log. Throws WeightingError when a sample's group has no
/// positive ratio.
FairLossResult fair_loss(const Tensor& logits, std::span<const int> labels, std::span<const int> groups,
                         std::span<const double> ratios, bool mean = false);
FairLossResult fair_loss(const Tensor& logits, std::span<const int> labels, std::span<const int> groups,
                         const BgmSpec& bgm, bool mean = false);

struct LossTraceRow {
    int epoch = 0;
    std::size_t step = 0;  // optimizer steps completed at the end of the epoch
    double loss = 0.0;     // mean batch loss over the epoch
    double lr = 0.0;       // lr used by the epoch's last step
};

struct TrainResult {
    ChildNetwork net;
    std::vector<LossTraceRow> trace;
};

/// Compiles a fresh network and trains it with BGM batches. Throws PlanError
/// if the training split cannot fill one batch and NumericError (with epoch
/// and step) on divergence.
TrainResult train_child(const ArchitectureEncoding& enc, const BgmSpec& bgm, const GroupedDataset& train,
                        const TrainConfig& cfg);

}  // namespace biasless
