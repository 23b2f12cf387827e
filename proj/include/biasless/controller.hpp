#pragma once

#include "biasless/evaluator.hpp"
#include "biasless/search_space.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace biasless {

struct RewardConfig {
    double alpha = 0.2;
    double beta = 0.8;
    /// Minimum acceptable overall accuracy (AC).
    double ac_threshold = 0.6;

    /// Throws ConfigError.
    void validate() const;
};

/// α·A − β·U when A ≥ AC, otherwise exactly −1.
double compute_reward(const EvalReport& report, const RewardConfig& cfg);
double compute_reward(double accuracy, double unfairness, const RewardConfig& cfg);

struct ReinforceConfig {
    /// Episodes per update (m).
    std::size_t episode_batch = 5;
    /// Tokens per episode (T); 0 means "the schema length".
    std::size_t steps_per_episode = 0;
    double gamma = 1.0;
    double baseline_decay = 0.9;
    double learning_rate = 1.0;
    /// Weight of an entropy bonus on the sampled trajectories. Off by default.
    double entropy_weight = 0.0;

    /// Throws ConfigError, including when T disagrees with the schema.
    void validate(std::size_t schema_length) const;
};

struct SampledEpisode {
    std::vector<int> tokens;
    std::vector<double> log_probs;  // log π(a_t | a_<t) per step
};

struct Episode {
    std::vector<int> tokens;
    std::vector<double> log_probs;
    double reward = 0.0;
};

struct UpdateReport {
    double gradient_norm = 0.0;
    double mean_reward = 0.0;
    double baseline_used = 0.0;  // b subtracted from the rewards of this batch
    double baseline_after = 0.0;
};

/// Autoregressive token policy: a single-layer tanh recurrence whose input at
/// step t is the embedding of the token chosen at t−1 (a learned start vector
/// at t=0), followed by one linear head per slot. Logits are clamped to
/// [−50, 50]. Heads start at zero, so a fresh policy is uniform per slot.
class ControllerPolicy {
public:
    static constexpr double kLogitClamp = 50.0;

    ControllerPolicy(TokenSchema schema, std::size_t hidden = 32, std::uint64_t seed = 0);

    const TokenSchema& schema() const { return schema_; }
    std::size_t hidden_size() const { return hidden_; }
    std::size_t parameter_count() const { return theta_.size(); }
    std::vector<double>& parameters() { return theta_; }
    const std::vector<double>& parameters() const { return theta_; }

    double baseline() const { return baseline_; }
    bool baseline_initialized() const { return baseline_ready_; }
    std::uint64_t update_count() const { return updates_; }

    /// Deterministic in (parameters, seed).
    SampledEpisode sample(std::uint64_t seed) const;
    /// Per-step distributions along a fixed token sequence. Throws SchemaError
    /// on a malformed sequence.
    std::vector<std::vector<double>> distributions(std::span<const int> tokens) const;
    /// Σ_t γ^{T−t} log π(a_t | a_<t).
    double weighted_log_prob(std::span<const int> tokens, double gamma) const;
    /// Probability of the whole sequence.
    double sequence_probability(std::span<const int> tokens) const;
    /// ∇θ of weighted_log_prob.
    std::vector<double> weighted_log_prob_gradient(std::span<const int> tokens, double gamma) const;
    /// ∇θ of Σ_t H(π_t) along the sequence.
    std::vector<double> entropy_gradient(std::span<const int> tokens) const;

    /// One ascent step on (1/m) Σ_k Σ_t γ^{T−t} ∇log π (R_k − b). The baseline
    /// starts at the first batch's mean reward and then follows an
    /// exponential moving average, updated after the step. Throws BatchError
    /// when the batch size or episode lengths do not match the config.
    UpdateReport reinforce_update(std::span<const Episode> episodes, const ReinforceConfig& cfg);

    /// Versioned binary checkpoint with the schema hash embedded.
    void save(const std::filesystem::path& path) const;
    /// Throws IoError on unreadable files and SchemaError when the checkpoint
    /// was written for a different schema or hidden size.
    static ControllerPolicy load(const std::filesystem::path& path, const TokenSchema& schema);

private:
    struct Forward;
    Forward run(std::span<const int> tokens) const;
    std::vector<double> backward(const Forward& fwd, std::span<const int> tokens,
                                 const std::vector<std::vector<double>>& dlogits) const;
    void check_tokens(std::span<const int> tokens) const;

    TokenSchema schema_;
    std::size_t hidden_;
    std::size_t max_choices_ = 0;
    // Offsets into theta_.
    std::size_t start_off_ = 0, wx_off_ = 0, wh_off_ = 0, b_off_ = 0;
    std::vector<std::size_t> embed_off_, head_off_, bias_off_;
    std::vector<double> theta_;
    double baseline_ = 0.0;
    bool baseline_ready_ = false;
    std::uint64_t updates_ = 0;
};

/// Max relative error between the analytic gradient of Σ_t γ^{T−t} log π and
/// central finite differences with step eps, over all parameters.
double grad_check_policy(const ControllerPolicy& policy, std::span<const int> tokens, double gamma, double eps);

}  // namespace biasless
