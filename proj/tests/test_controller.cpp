#include "biasless/controller.hpp"
#include "biasless/errors.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

using namespace biasless;
namespace fs = std::filesystem;

namespace {

TokenSchema schema_of(std::vector<std::size_t> sizes) {
    TokenSchema s;
    for (std::size_t i = 0; i < sizes.size(); ++i)
        s.slots.push_back(TokenSlot{i == 0 ? SlotKind::Ratio : SlotKind::Type, i, sizes[i]});
    return s;
}

void jitter(ControllerPolicy& p, std::uint64_t seed, double scale = 0.5) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-scale, scale);
    for (auto& v : p.parameters()) v = u(rng);
}

ReinforceConfig single_episode() {
    ReinforceConfig cfg;
    cfg.episode_batch = 1;
    return cfg;
}

}  // namespace

TEST_CASE("reward examples") {
    const RewardConfig fair{0.2, 0.8, 0.6};
    CHECK(std::abs(compute_reward(0.7951, 0.0779, fair) - 0.09670) < 1e-9);
    CHECK(compute_reward(0.50, 0.0, fair) == -1.0);
    CHECK(compute_reward(0.5999, 0.0, RewardConfig{5.0, 0.0, 0.6}) == -1.0);
    CHECK(compute_reward(1.0, 0.0, RewardConfig{0.8, 0.2, 0.0}) == doctest::Approx(0.8).epsilon(1e-15));

    EvalReport r;
    r.overall_acc = 0.7951;
    r.unfairness = 0.0779;
    CHECK(compute_reward(r, fair) == compute_reward(0.7951, 0.0779, fair));

    for (double a = 0.6; a < 1.0; a += 0.05) {
        CHECK(compute_reward(a + 0.01, 0.1, fair) > compute_reward(a, 0.1, fair));
        CHECK(compute_reward(a, 0.11, fair) < compute_reward(a, 0.1, fair));
    }
    CHECK_THROWS_AS(RewardConfig({-0.1, 0.5, 0.5}).validate(), ConfigError);
    CHECK_THROWS_AS(RewardConfig({0.0, 0.0, 0.5}).validate(), ConfigError);
    CHECK_THROWS_AS(RewardConfig({0.2, 0.8, 1.5}).validate(), ConfigError);
}

TEST_CASE("a fresh policy samples each candidate equally often") {
    const ControllerPolicy p(schema_of({2}), 8, 1);
    int ones = 0;
    for (std::uint64_t s = 0; s < 10000; ++s) ones += p.sample(s).tokens[0];
    CHECK(ones >= 4900);
    CHECK(ones <= 5100);
}

TEST_CASE("a saturated logit is always sampled") {
    ControllerPolicy p(schema_of({2}), 4, 1);
    p.parameters()[p.parameter_count() - 2] = 1e6;  // bias of candidate 0 in the only head
    for (std::uint64_t s = 0; s < 2000; ++s) CHECK(p.sample(s).tokens[0] == 0);
    const auto d = p.distributions(std::vector<int>{0});
    CHECK(std::isfinite(std::log(d[0][1])));
}

TEST_CASE("sampling is a function of the seed") {
    ControllerPolicy p(schema_of({3, 4, 2, 5}), 8, 2);
    jitter(p, 4);
    const auto a = p.sample(17), b = p.sample(17);
    CHECK(a.tokens == b.tokens);
    CHECK(a.log_probs == b.log_probs);
    bool differs = false;
    for (std::uint64_t s = 0; s < 20 && !differs; ++s) differs = p.sample(s).tokens != a.tokens;
    CHECK(differs);
}

TEST_CASE("log-prob bookkeeping") {
    ControllerPolicy p(schema_of({3, 4, 2, 5}), 8, 3);
    jitter(p, 5);
    for (std::uint64_t s = 0; s < 50; ++s) {
        const auto e = p.sample(s);
        const auto d = p.distributions(e.tokens);
        double lp = 0.0;
        for (std::size_t t = 0; t < e.tokens.size(); ++t) {
            double sum = 0.0;
            for (double q : d[t]) {
                CHECK(q >= 0.0);
                sum += q;
            }
            CHECK(std::abs(sum - 1.0) < 1e-6);
            CHECK(std::abs(std::exp(e.log_probs[t]) - d[t][static_cast<std::size_t>(e.tokens[t])]) < 1e-9);
            lp += e.log_probs[t];
        }
        CHECK(std::abs(std::exp(lp) - p.sequence_probability(e.tokens)) < 1e-9);
    }
    CHECK_THROWS_AS(p.distributions(std::vector<int>{0, 4, 0, 0}), SchemaError);
    CHECK_THROWS_AS(p.distributions(std::vector<int>{0, 0}), SchemaError);
}

TEST_CASE("rewards equal to the baseline leave the policy unchanged") {
    ControllerPolicy p(schema_of({3, 2}), 8, 4);
    jitter(p, 6);
    ReinforceConfig cfg;
    cfg.episode_batch = 3;
    auto batch = [&](double r) {
        std::vector<Episode> eps;
        for (std::uint64_t s = 0; s < 3; ++s) {
            const auto e = p.sample(s);
            eps.push_back({e.tokens, e.log_probs, r});
        }
        return eps;
    };
    const auto before = p.parameters();
    const auto first = p.reinforce_update(batch(0.3), cfg);
    CHECK(first.gradient_norm == 0.0);
    CHECK(p.parameters() == before);
    CHECK(p.baseline() == doctest::Approx(0.3));
    const auto second = p.reinforce_update(batch(p.baseline()), cfg);
    CHECK(second.gradient_norm == 0.0);
    CHECK(p.parameters() == before);
}

TEST_CASE("a positive advantage raises the sampled token's probability") {
    ControllerPolicy p(schema_of({2}), 4, 7);
    const auto cfg = single_episode();
    const auto e = p.sample(3);
    p.reinforce_update(std::vector<Episode>{{e.tokens, e.log_probs, 0.0}}, cfg);
    CHECK(p.baseline() == 0.0);
    const double before = p.sequence_probability(e.tokens);
    const auto e2 = p.sample(3);
    REQUIRE(e2.tokens == e.tokens);
    const auto rep = p.reinforce_update(std::vector<Episode>{{e2.tokens, e2.log_probs, 1.0}}, cfg);
    CHECK(rep.baseline_used == 0.0);
    CHECK(rep.gradient_norm > 0.0);
    CHECK(p.sequence_probability(e.tokens) > before);
    CHECK(p.baseline() == doctest::Approx(0.1));
}

TEST_CASE("the discount weights earlier steps less") {
    ControllerPolicy p(schema_of({3, 4}), 4, 8);
    jitter(p, 9);
    const std::vector<int> tokens = {2, 1};
    const auto d = p.distributions(tokens);
    const double l1 = std::log(d[0][2]), l2 = std::log(d[1][1]);
    CHECK(p.weighted_log_prob(tokens, 0.5) == doctest::Approx(0.5 * l1 + l2).epsilon(1e-12));
    CHECK(p.weighted_log_prob(tokens, 1.0) == doctest::Approx(l1 + l2).epsilon(1e-12));
    // Since the objective is linear in the step weights, g(γ) = γ·G1 + G2.
    const auto g1 = p.weighted_log_prob_gradient(tokens, 1.0);
    const auto gh = p.weighted_log_prob_gradient(tokens, 0.5);
    const auto g0 = p.weighted_log_prob_gradient(tokens, 1e-300);
    for (std::size_t i = 0; i < g1.size(); ++i) {
        const double step1 = g1[i] - g0[i];
        CHECK(gh[i] == doctest::Approx(0.5 * step1 + g0[i]).epsilon(1e-9).scale(1e-12));
    }
    CHECK(grad_check_policy(p, tokens, 0.5, 1e-5) < 1e-4);
}

TEST_CASE("policy gradient matches finite differences") {
    ControllerPolicy p(schema_of({3, 5}), 4, 10);
    jitter(p, 11);
    for (std::uint64_t s = 0; s < 5; ++s) {
        const auto tokens = p.sample(s).tokens;
        const double err = grad_check_policy(p, tokens, 1.0, 1e-5);
        CHECK(err < 1e-4);
        CHECK(grad_check_policy(p, tokens, 1.0, 5e-6) <= std::max(err, 1e-6));
    }
}

TEST_CASE("reinforce rejects a batch of the wrong shape") {
    ControllerPolicy p(schema_of({3, 2}), 4, 12);
    ReinforceConfig cfg;
    cfg.episode_batch = 2;
    const auto e = p.sample(0);
    CHECK_THROWS_AS(p.reinforce_update(std::vector<Episode>{{e.tokens, e.log_probs, 1.0}}, cfg), BatchError);
    CHECK_THROWS_AS(p.reinforce_update(std::vector<Episode>{{e.tokens, e.log_probs, 1.0}, {{0}, {0.0}, 1.0}}, cfg),
                    BatchError);
    ReinforceConfig bad;
    bad.steps_per_episode = 3;
    CHECK_THROWS_AS(bad.validate(2), ConfigError);
    bad = {};
    bad.gamma = 0.0;
    CHECK_THROWS_AS(bad.validate(2), ConfigError);
}

TEST_CASE("checkpoint round trip and schema check") {
    const auto dir = fs::temp_directory_path() / ("biasless-ctl-" + std::to_string(std::random_device{}()));
    fs::create_directories(dir);
    ControllerPolicy p(schema_of({3, 2, 4}), 6, 13);
    jitter(p, 14);
    const auto e = p.sample(1);
    p.reinforce_update(std::vector<Episode>{{e.tokens, e.log_probs, 0.4}}, single_episode());
    p.save(dir / "c.bin");
    const auto q = ControllerPolicy::load(dir / "c.bin", p.schema());
    CHECK(q.parameters() == p.parameters());
    CHECK(q.baseline() == p.baseline());
    CHECK(q.baseline_initialized());
    CHECK(q.update_count() == 1);
    CHECK(q.hidden_size() == 6);
    CHECK(q.sample(9).tokens == p.sample(9).tokens);
    CHECK_THROWS_AS(ControllerPolicy::load(dir / "c.bin", schema_of({3, 2, 5})), SchemaError);
    CHECK_THROWS_AS(ControllerPolicy::load(dir / "missing.bin", p.schema()), IoError);
    fs::remove_all(dir);
}
