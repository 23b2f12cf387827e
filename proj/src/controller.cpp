#include "biasless/controller.hpp"

#include "biasless/errors.hpp"
#include "biasless/seeding.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>

namespace biasless {

void RewardConfig::validate() const {
    if (!(alpha >= 0.0) || !(beta >= 0.0)) throw ConfigError("reward: alpha and beta must be >= 0");
    if (!(alpha + beta > 0.0)) throw ConfigError("reward: alpha + beta must be > 0");
    if (!(ac_threshold >= 0.0 && ac_threshold <= 1.0)) throw ConfigError("reward: AC threshold must be in [0, 1]");
}

double compute_reward(double accuracy, double unfairness, const RewardConfig& cfg) {
    if (accuracy < cfg.ac_threshold) return -1.0;
    return cfg.alpha * accuracy - cfg.beta * unfairness;
}

double compute_reward(const EvalReport& report, const RewardConfig& cfg) {
    return compute_reward(report.overall_acc, report.unfairness, cfg);
}

void ReinforceConfig::validate(std::size_t schema_length) const {
    if (episode_batch < 1) throw ConfigError("controller: episode batch must be >= 1");
    if (steps_per_episode != 0 && steps_per_episode != schema_length)
        throw ConfigError("controller: steps per episode (" + std::to_string(steps_per_episode) +
                          ") must equal the token schema length (" + std::to_string(schema_length) + ")");
    if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("controller: gamma must be in (0, 1]");
    if (!(baseline_decay > 0.0 && baseline_decay < 1.0)) throw ConfigError("controller: baseline decay must be in (0, 1)");
    if (!(learning_rate > 0.0)) throw ConfigError("controller: learning rate must be positive");
    if (!(entropy_weight >= 0.0)) throw ConfigError("controller: entropy weight must be >= 0");
}

namespace {

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

void softmax(std::vector<double>& z) {
    const double m = *std::max_element(z.begin(), z.end());
    double s = 0.0;
    for (auto& v : z) {
        v = std::exp(v - m);
        s += v;
    }
    for (auto& v : z) v /= s;
}

}  // namespace

ControllerPolicy::ControllerPolicy(TokenSchema schema, std::size_t hidden, std::uint64_t seed)
    : schema_(std::move(schema)), hidden_(hidden) {
    if (schema_.length() == 0) throw SchemaError("controller: empty token schema");
    if (hidden_ == 0) throw ConfigError("controller: hidden size must be >= 1");
    const std::size_t H = hidden_;
    std::size_t off = 0;
    start_off_ = off;
    off += H;
    wx_off_ = off;
    off += H * H;
    wh_off_ = off;
    off += H * H;
    b_off_ = off;
    off += H;
    for (const auto& slot : schema_.slots) {
        if (slot.candidates == 0) throw SchemaError("controller: slot with no candidates");
        max_choices_ = std::max(max_choices_, slot.candidates);
        embed_off_.push_back(off);
        off += slot.candidates * H;
    }
    for (const auto& slot : schema_.slots) {
        head_off_.push_back(off);
        off += slot.candidates * H;
        bias_off_.push_back(off);
        off += slot.candidates;
    }
    theta_.assign(off, 0.0);

    std::mt19937_64 rng(derive_seed(seed, "controller-init"));
    auto fill = [&](std::size_t begin, std::size_t count, double scale) {
        for (std::size_t i = 0; i < count; ++i) theta_[begin + i] = scale * (2.0 * uniform01(rng) - 1.0);
    };
    const double rec = 1.0 / std::sqrt(static_cast<double>(H));
    fill(start_off_, H, 0.1);
    fill(wx_off_, H * H, rec);
    fill(wh_off_, H * H, rec);
    for (std::size_t s = 0; s < schema_.length(); ++s) fill(embed_off_[s], schema_.slots[s].candidates * H, 0.1);
}

struct ControllerPolicy::Forward {
    std::vector<std::vector<double>> x;       // step inputs
    std::vector<std::vector<double>> h;       // hidden states
    std::vector<std::vector<double>> probs;   // per-step distributions
    std::vector<std::vector<bool>> clamped;   // logits hitting the clamp
};

void ControllerPolicy::check_tokens(std::span<const int> tokens) const {
    if (tokens.size() != schema_.length())
        throw SchemaError("token sequence has length " + std::to_string(tokens.size()) + ", schema expects " +
                          std::to_string(schema_.length()));
    for (std::size_t t = 0; t < tokens.size(); ++t)
        if (tokens[t] < 0 || static_cast<std::size_t>(tokens[t]) >= schema_.slots[t].candidates)
            throw SchemaError("token " + std::to_string(tokens[t]) + " out of range at step " + std::to_string(t));
}

// Runs the recurrence. When `tokens` is shorter than the schema only the
// steps whose inputs are known are computed (used by sampling).
ControllerPolicy::Forward ControllerPolicy::run(std::span<const int> tokens) const {
    const std::size_t H = hidden_;
    const std::size_t T = std::min(schema_.length(), tokens.size() + 1);
    Forward f;
    std::vector<double> prev(H, 0.0);
    for (std::size_t t = 0; t < T; ++t) {
        std::vector<double> x(H);
        const double* src = t == 0 ? &theta_[start_off_]
                                   : &theta_[embed_off_[t - 1] + static_cast<std::size_t>(tokens[t - 1]) * H];
        std::copy(src, src + H, x.begin());
        std::vector<double> h(H);
        for (std::size_t i = 0; i < H; ++i) {
            double a = theta_[b_off_ + i];
            const double* wx = &theta_[wx_off_ + i * H];
            const double* wh = &theta_[wh_off_ + i * H];
            for (std::size_t j = 0; j < H; ++j) a += wx[j] * x[j] + wh[j] * prev[j];
            h[i] = std::tanh(a);
        }
        const std::size_t n = schema_.slots[t].candidates;
        std::vector<double> z(n);
        std::vector<bool> cl(n, false);
        for (std::size_t c = 0; c < n; ++c) {
            double v = theta_[bias_off_[t] + c];
            const double* v_row = &theta_[head_off_[t] + c * H];
            for (std::size_t j = 0; j < H; ++j) v += v_row[j] * h[j];
            if (v > kLogitClamp || v < -kLogitClamp) {
                v = std::clamp(v, -kLogitClamp, kLogitClamp);
                cl[c] = true;
            }
            z[c] = v;
        }
        softmax(z);
        f.x.push_back(std::move(x));
        f.h.push_back(h);
        f.probs.push_back(std::move(z));
        f.clamped.push_back(std::move(cl));
        prev = std::move(h);
    }
    return f;
}

std::vector<double> ControllerPolicy::backward(const Forward& f, std::span<const int> tokens,
                                               const std::vector<std::vector<double>>& dlogits) const {
    const std::size_t H = hidden_;
    const std::size_t T = schema_.length();
    std::vector<double> g(theta_.size(), 0.0);
    std::vector<double> dh_next(H, 0.0), da(H), dh(H);
    for (std::size_t t = T; t-- > 0;) {
        const auto& h = f.h[t];
        dh = dh_next;
        for (std::size_t c = 0; c < schema_.slots[t].candidates; ++c) {
            const double d = f.clamped[t][c] ? 0.0 : dlogits[t][c];
            if (d == 0.0) continue;
            g[bias_off_[t] + c] += d;
            double* gv = &g[head_off_[t] + c * H];
            const double* v_row = &theta_[head_off_[t] + c * H];
            for (std::size_t j = 0; j < H; ++j) {
                gv[j] += d * h[j];
                dh[j] += d * v_row[j];
            }
        }
        for (std::size_t i = 0; i < H; ++i) da[i] = dh[i] * (1.0 - h[i] * h[i]);
        const auto& x = f.x[t];
        double* gx_in = t == 0 ? &g[start_off_] : &g[embed_off_[t - 1] + static_cast<std::size_t>(tokens[t - 1]) * H];
        std::fill(dh_next.begin(), dh_next.end(), 0.0);
        for (std::size_t i = 0; i < H; ++i) {
            if (da[i] == 0.0) continue;
            g[b_off_ + i] += da[i];
            double* gwx = &g[wx_off_ + i * H];
            double* gwh = &g[wh_off_ + i * H];
            const double* wx = &theta_[wx_off_ + i * H];
            const double* wh = &theta_[wh_off_ + i * H];
            for (std::size_t j = 0; j < H; ++j) {
                gwx[j] += da[i] * x[j];
                gx_in[j] += da[i] * wx[j];
                if (t > 0) {
                    gwh[j] += da[i] * f.h[t - 1][j];
                    dh_next[j] += da[i] * wh[j];
                }
            }
        }
    }
    return g;
}

SampledEpisode ControllerPolicy::sample(std::uint64_t seed) const {
    std::mt19937_64 rng(seed);
    SampledEpisode ep;
    ep.tokens.reserve(schema_.length());
    for (std::size_t t = 0; t < schema_.length(); ++t) {
        // Recomputing the prefix keeps sampling and scoring on one code path;
        // schemas are short enough that the quadratic cost does not matter.
        const auto f = run(ep.tokens);
        const auto& p = f.probs[t];
        const double u = uniform01(rng);
        double acc = 0.0;
        std::size_t pick = p.size() - 1;
        for (std::size_t c = 0; c < p.size(); ++c) {
            acc += p[c];
            if (u < acc) {
                pick = c;
                break;
            }
        }
        while (p[pick] == 0.0 && pick > 0) --pick;
        ep.tokens.push_back(static_cast<int>(pick));
        ep.log_probs.push_back(std::log(p[pick]));
    }
    return ep;
}

std::vector<std::vector<double>> ControllerPolicy::distributions(std::span<const int> tokens) const {
    check_tokens(tokens);
    return run(tokens).probs;
}

double ControllerPolicy::weighted_log_prob(std::span<const int> tokens, double gamma) const {
    const auto probs = distributions(tokens);
    const std::size_t T = tokens.size();
    double s = 0.0;
    for (std::size_t t = 0; t < T; ++t)
        s += std::pow(gamma, static_cast<double>(T - 1 - t)) * std::log(probs[t][static_cast<std::size_t>(tokens[t])]);
    return s;
}

double ControllerPolicy::sequence_probability(std::span<const int> tokens) const {
    return std::exp(weighted_log_prob(tokens, 1.0));
}

std::vector<double> ControllerPolicy::weighted_log_prob_gradient(std::span<const int> tokens, double gamma) const {
    check_tokens(tokens);
    const auto f = run(tokens);
    const std::size_t T = tokens.size();
    std::vector<std::vector<double>> dz(T);
    for (std::size_t t = 0; t < T; ++t) {
        const double w = std::pow(gamma, static_cast<double>(T - 1 - t));
        dz[t].resize(f.probs[t].size());
        for (std::size_t c = 0; c < dz[t].size(); ++c)
            dz[t][c] = w * ((static_cast<int>(c) == tokens[t] ? 1.0 : 0.0) - f.probs[t][c]);
    }
    return backward(f, tokens, dz);
}

std::vector<double> ControllerPolicy::entropy_gradient(std::span<const int> tokens) const {
    check_tokens(tokens);
    const auto f = run(tokens);
    std::vector<std::vector<double>> dz(tokens.size());
    for (std::size_t t = 0; t < tokens.size(); ++t) {
        const auto& p = f.probs[t];
        double ent = 0.0;
        for (double v : p)
            if (v > 0.0) ent -= v * std::log(v);
        dz[t].resize(p.size());
        for (std::size_t c = 0; c < p.size(); ++c) dz[t][c] = p[c] > 0.0 ? -p[c] * (std::log(p[c]) + ent) : 0.0;
    }
    return backward(f, tokens, dz);
}

UpdateReport ControllerPolicy::reinforce_update(std::span<const Episode> episodes, const ReinforceConfig& cfg) {
    cfg.validate(schema_.length());
    if (episodes.size() != cfg.episode_batch)
        throw BatchError("expected " + std::to_string(cfg.episode_batch) + " episodes, got " +
                         std::to_string(episodes.size()));
    for (const auto& ep : episodes) {
        if (ep.tokens.size() != schema_.length() || ep.log_probs.size() != schema_.length())
            throw BatchError("episode length does not match the token schema length " +
                             std::to_string(schema_.length()));
        check_tokens(ep.tokens);
    }

    UpdateReport rep;
    double mean = 0.0;
    for (const auto& ep : episodes) mean += ep.reward;
    mean /= static_cast<double>(episodes.size());
    if (!baseline_ready_) {
        baseline_ = mean;
        baseline_ready_ = true;
    }
    rep.mean_reward = mean;
    rep.baseline_used = baseline_;

    std::vector<double> grad(theta_.size(), 0.0);
    const double inv_m = 1.0 / static_cast<double>(episodes.size());
    for (const auto& ep : episodes) {
        const double adv = ep.reward - baseline_;
        if (adv != 0.0) {
            const auto g = weighted_log_prob_gradient(ep.tokens, cfg.gamma);
            for (std::size_t i = 0; i < g.size(); ++i) grad[i] += inv_m * adv * g[i];
        }
        if (cfg.entropy_weight > 0.0) {
            const auto g = entropy_gradient(ep.tokens);
            for (std::size_t i = 0; i < g.size(); ++i) grad[i] += inv_m * cfg.entropy_weight * g[i];
        }
    }
    double norm2 = 0.0;
    for (std::size_t i = 0; i < grad.size(); ++i) {
        norm2 += grad[i] * grad[i];
        theta_[i] += cfg.learning_rate * grad[i];
    }
    rep.gradient_norm = std::sqrt(norm2);
    baseline_ = cfg.baseline_decay * baseline_ + (1.0 - cfg.baseline_decay) * mean;
    rep.baseline_after = baseline_;
    ++updates_;
    return rep;
}

namespace {

constexpr char kMagic[8] = {'B', 'L', 'N', 'S', 'C', 'T', 'L', '1'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void put(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& is, const std::filesystem::path& path) {
    T v{};
    if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw IoError("truncated controller checkpoint " + path.string());
    return v;
}

}  // namespace

void ControllerPolicy::save(const std::filesystem::path& path) const {
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw IoError("cannot write controller checkpoint " + tmp.string());
        os.write(kMagic, sizeof kMagic);
        put(os, kVersion);
        put(os, schema_.hash());
        put(os, static_cast<std::uint64_t>(hidden_));
        put(os, static_cast<std::uint64_t>(theta_.size()));
        os.write(reinterpret_cast<const char*>(theta_.data()), static_cast<std::streamsize>(theta_.size() * sizeof(double)));
        put(os, baseline_);
        put(os, static_cast<std::uint8_t>(baseline_ready_ ? 1 : 0));
        put(os, updates_);
        if (!os) throw IoError("failed writing controller checkpoint " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot move controller checkpoint into place at " + path.string() + ": " + ec.message());
}

ControllerPolicy ControllerPolicy::load(const std::filesystem::path& path, const TokenSchema& schema) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open controller checkpoint " + path.string());
    char magic[8];
    if (!is.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0)
        throw IoError(path.string() + " is not a controller checkpoint");
    const auto version = get<std::uint32_t>(is, path);
    if (version != kVersion) throw SchemaError("unsupported controller checkpoint version " + std::to_string(version));
    const auto hash = get<std::uint64_t>(is, path);
    if (hash != schema.hash()) throw SchemaError("controller checkpoint " + path.string() + " was written for a different token schema");
    const auto hidden = get<std::uint64_t>(is, path);
    ControllerPolicy policy(schema, static_cast<std::size_t>(hidden), 0);
    const auto count = get<std::uint64_t>(is, path);
    if (count != policy.theta_.size()) throw SchemaError("controller checkpoint parameter count mismatch");
    if (!is.read(reinterpret_cast<char*>(policy.theta_.data()), static_cast<std::streamsize>(count * sizeof(double))))
        throw IoError("truncated controller checkpoint " + path.string());
    policy.baseline_ = get<double>(is, path);
    policy.baseline_ready_ = get<std::uint8_t>(is, path) != 0;
    policy.updates_ = get<std::uint64_t>(is, path);
    return policy;
}

double grad_check_policy(const ControllerPolicy& policy, std::span<const int> tokens, double gamma, double eps) {
    if (!(eps > 0.0)) throw ConfigError("grad check: eps must be positive");
    const auto analytic = policy.weighted_log_prob_gradient(tokens, gamma);
    ControllerPolicy probe = policy;
    auto& theta = probe.parameters();
    double worst = 0.0;
    for (std::size_t i = 0; i < theta.size(); ++i) {
        const double saved = theta[i];
        theta[i] = saved + eps;
        const double up = probe.weighted_log_prob(tokens, gamma);
        theta[i] = saved - eps;
        const double down = probe.weighted_log_prob(tokens, gamma);
        theta[i] = saved;
        const double numeric = (up - down) / (2.0 * eps);
        const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
        worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
    }
    return worst;
}

}  // namespace biasless
