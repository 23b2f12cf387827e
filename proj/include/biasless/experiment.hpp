#pragma once

#include "biasless/config.hpp"
#include "biasless/controller.hpp"
#include "biasless/data.hpp"
#include "biasless/evaluator.hpp"
#include "biasless/search_space.hpp"
#include "biasless/surrogate.hpp"
#include "biasless/trainer.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace biasless {

struct DataSplits {
    GroupedDataset train;
    GroupedDataset validation;
};

/// Generates or loads the configured data and copies its shape, class count
/// and group count into the search-space config.
DataSplits prepare_data(ExperimentConfig& cfg);

/// "balanced", "proportional", a minority fraction ("0.25") or explicit
/// shares ("0.75/0.25"), bound to the group sizes (ordering rule checked).
BgmSpec resolve_bgm(std::string_view text, std::span<const std::size_t> group_sizes);

/// Outcome of evaluating one child.
struct ChildOutcome {
    /// "ok", "diverged" (training failed numerically) or "invalid" (the
    /// tokens do not decode to a network).
    std::string status = "ok";
    std::optional<EvalReport> report;
    std::vector<LossTraceRow> loss;
    std::string message;
};

/// Scores search points. Implementations must be deterministic in
/// (point, seed) and safe to call from several threads at once.
class ChildEvaluator {
public:
    virtual ~ChildEvaluator() = default;
    virtual ChildOutcome evaluate(const SearchPoint& point, std::uint64_t seed) const = 0;
};

/// Trains the child from scratch and scores it on the validation split.
class TrainingEvaluator final : public ChildEvaluator {
public:
    TrainingEvaluator(const DataSplits& data, TrainConfig train, FairnessOptions fairness)
        : data_(data), train_(train), fairness_(fairness) {}
    ChildOutcome evaluate(const SearchPoint& point, std::uint64_t seed) const override;

private:
    const DataSplits& data_;
    TrainConfig train_;
    FairnessOptions fairness_;
};

/// Looks the child up in a surrogate table.
class SurrogateEvaluator final : public ChildEvaluator {
public:
    SurrogateEvaluator(const SurrogateTable& table, FairnessOptions fairness) : table_(table), fairness_(fairness) {}
    ChildOutcome evaluate(const SearchPoint& point, std::uint64_t seed) const override;

private:
    const SurrogateTable& table_;
    FairnessOptions fairness_;
};

/// One evaluated child as recorded in the trace.
struct TraceRow {
    std::size_t iteration = 0;  // running child index
    std::size_t update = 0;
    std::size_t episode = 0;
    std::vector<int> tokens;
    std::string point;  // canonical text, empty for invalid children
    std::vector<double> ratios;
    std::string status;
    std::optional<EvalReport> report;
    double reward = -1.0;
    double baseline = 0.0;
    double gradient_norm = 0.0;
};

struct SearchResult {
    std::vector<TraceRow> rows;
    /// Highest reward; earliest iteration on ties. Unset when no child was valid.
    std::optional<TraceRow> best;
    std::filesystem::path directory;
};

struct SearchSetup {
    const SearchSpace* space = nullptr;
    const ChildEvaluator* evaluator = nullptr;
    RewardConfig reward;
    ReinforceConfig reinforce;
    std::size_t updates = 1;
    std::size_t controller_hidden = 32;
    std::size_t workers = 1;
    bool cache_children = true;
    bool resume = true;
    std::uint64_t seed = 0;
    /// Output directory; files: trace.csv, loss_trace.csv, reports.jsonl,
    /// timing.csv, controller.bin, best.json.
    std::filesystem::path directory;
    /// Called after every controller update with the rows just written and
    /// the updated policy.
    std::function<void(std::size_t update, const std::vector<TraceRow>&, const ControllerPolicy&)> on_update;
};

/// Setup carrying the search knobs of `cfg`.
SearchSetup make_search_setup(const ExperimentConfig& cfg, const SearchSpace& space, const ChildEvaluator& evaluator,
                              std::uint64_t seed, std::filesystem::path directory);

/// sample m → evaluate → reward → update, `updates` times. Rows are appended
/// and flushed after every update, followed by a controller checkpoint. With
/// `resume`, a directory holding a checkpoint continues from the last
/// completed update; rows written after that checkpoint are dropped and
/// regenerated.
SearchResult run_search(const SearchSetup& setup);

/// Header of trace.csv for K groups.
std::string trace_header(std::size_t groups);
/// Parses trace.csv back into rows (reports rebuilt from the stored fields).
std::vector<TraceRow> read_trace(const std::filesystem::path& path);

struct PlotFiles {
    std::filesystem::path scatter;
    std::filesystem::path reward_curve;
};
/// scatter.csv: iteration, accuracy, unfairness, reward (only rows with a
/// report, values copied verbatim from the trace). reward_curve.csv: one row
/// per trace row with the running best reward and the baseline.
PlotFiles emit_plot_data(const std::filesystem::path& trace_csv, const std::filesystem::path& out_dir);

/// Ablation arms, in report order.
enum class Arm : std::uint8_t { Vanilla, FairLossOnly, BalancedFairLoss, SearchOnly, Full };
std::string_view to_string(Arm arm);
std::vector<Arm> all_arms();

struct ArmSummary {
    Arm arm = Arm::Vanilla;
    std::vector<EvalReport> per_seed;
    std::vector<std::string> points;  // evaluated or best point per seed
    double median_accuracy = 0.0;
    double median_unfairness = 0.0;
    double median_di = 0.0;
    double median_spd = 0.0;
    std::size_t accuracy_rank = 0;
    std::size_t unfairness_rank = 0;
    std::size_t rank = 0;
};

/// Composite ordering: arms are ranked by median accuracy (descending) and
/// by median U (ascending); the overall rank sorts by the sum of the two
/// ranks, then by U, then by accuracy.
void rank_arms(std::vector<ArmSummary>& arms);

struct AblationResult {
    std::vector<ArmSummary> arms;  // in rank order
    std::filesystem::path directory;
};

/// Runs every arm for every seed. Fixed-architecture arms train cfg.fixed_arch
/// once per seed; search arms use the full search loop and report their best
/// child. Writes ranking.csv and ranking.json.
AblationResult run_ablation(ExperimentConfig cfg, const DataSplits& data,
                            const std::function<void(const std::string&)>& log = {});

struct TrainOneResult {
    SearchPoint point;
    ChildOutcome outcome;
    std::optional<ChildNetwork> network;
};

/// Trains one point (text form or a fixed-point name with cfg.ratio).
TrainOneResult train_one(const ExperimentConfig& cfg, const DataSplits& data, std::uint64_t seed);
SearchPoint resolve_point(const ExperimentConfig& cfg, std::span<const std::size_t> group_sizes);

/// Seed for training a child: keyed by the search seed and the point text, so
/// a point evaluated twice in one search gets the same result.
std::uint64_t child_seed(std::uint64_t search_seed, const std::string& point_text);

/// JSON text for a report (DI is null when undefined).
std::string report_json(const EvalReport& report);

double median(std::vector<double> values);

}  // namespace biasless
