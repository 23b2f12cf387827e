#pragma once

#include "biasless/data.hpp"
#include "biasless/nn.hpp"

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

namespace biasless {

/// Which group counts as privileged for DI/SPD. Unset means the largest
/// group (lowest index on ties). The unprivileged side pools all other
/// groups. A "favorable" outcome is a correct prediction.
struct FairnessOptions {
    std::optional<std::size_t> privileged_group;
    /// Report DI as NaN instead of throwing DegenerateMetricError.
    bool allow_degenerate = false;
};

struct GroupTally {
    std::size_t correct = 0;
    std::size_t total = 0;
};

struct SampleOutcome {
    std::size_t group = 0;
    bool correct = false;
};

struct EvalReport {
    double overall_acc = 0.0;
    std::vector<double> group_acc;
    double unfairness = 0.0;
    double di = 1.0;
    double spd = 0.0;
    std::vector<std::size_t> group_counts;
    std::vector<std::size_t> group_correct;
};

/// U = Σ_i |A_i − A|.
double unfairness_score(std::span<const double> group_acc, double overall_acc);

/// P(correct | unprivileged) / P(correct | privileged). Throws
/// EvaluationError if either side is empty and DegenerateMetricError if the
/// privileged rate is zero. A single-group input yields 1.
double disparate_impact(std::span<const SampleOutcome> outcomes, std::size_t groups, const FairnessOptions& opts = {});
/// P(correct | unprivileged) − P(correct | privileged); 0 for a single group.
double statistical_parity_difference(std::span<const SampleOutcome> outcomes, std::size_t groups,
                                     const FairnessOptions& opts = {});

/// Builds a full report from per-group correct/total counts. Accuracies are
/// ratios of integer counts, and U is accumulated from exact integer
/// numerators |c_i·T − C·t_i| before the final divisions.
EvalReport report_from_tallies(std::span<const GroupTally> tallies, const FairnessOptions& opts = {});
/// Builds a report from per-group accuracies and group sizes (overall
/// accuracy is their count-weighted mean).
EvalReport report_from_accuracies(std::span<const double> group_acc, std::span<const std::size_t> group_sizes,
                                  const FairnessOptions& opts = {});

/// Argmax class per sample, ties to the lowest class index.
std::vector<int> predict(ChildNetwork& net, const GroupedDataset& ds, std::size_t batch_size = 256);
/// Throws EvaluationError naming the first empty group.
EvalReport evaluate(ChildNetwork& net, const GroupedDataset& ds, const FairnessOptions& opts = {});

}  // namespace biasless
