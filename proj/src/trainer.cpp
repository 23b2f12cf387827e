#include "biasless/trainer.hpp"

#include "biasless/errors.hpp"
#include "biasless/seeding.hpp"

#include <algorithm>
#include <cmath>

namespace biasless {

std::string_view to_string(LossMode mode) { return mode == LossMode::Fair ? "fair" : "plain"; }

LossMode parse_loss_mode(std::string_view text) {
    if (text == "fair") return LossMode::Fair;
    if (text == "plain") return LossMode::Plain;
    throw ConfigError("unknown loss mode '" + std::string(text) + "'");
}

void TrainConfig::validate(std::size_t groups) const {
    if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (batch_size < groups) throw ConfigError("train: batch size must be >= the number of groups");
    if (!(learning_rate > 0.0)) throw ConfigError("train: learning rate must be positive");
    if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw ConfigError("train: lr decay must be in (0, 1]");
    if (decay_interval == 0) throw ConfigError("train: decay interval must be >= 1");
}

double learning_rate_at(const TrainConfig& cfg, std::size_t step) {
    return cfg.learning_rate * std::pow(cfg.lr_decay, static_cast<double>(step / cfg.decay_interval));
}

FairLossResult fair_loss(const Tensor& logits, std::span<const int> labels, std::span<const int> groups,
                         std::span<const double> ratios, bool mean) {
    if (logits.shape.size() != 2 || logits.dim(0) != labels.size() || labels.size() != groups.size())
        throw WeightingError("fair_loss: logits rows, labels and groups must agree");
    const std::size_t n = labels.size();
    const std::size_t classes = logits.dim(1);
    const double top = ratios.empty() ? 0.0 : *std::max_element(ratios.begin(), ratios.end());

    FairLossResult out;
    out.report.group_loss.assign(ratios.size(), 0.0);
    out.report.weights.resize(n);
    out.grad = Tensor(logits.shape);
    const double scale = mean && n > 0 ? 1.0 / static_cast<double>(n) : 1.0;

    std::vector<double> p(classes);
    for (std::size_t s = 0; s < n; ++s) {
        const auto g = static_cast<std::size_t>(groups[s]);
        if (groups[s] < 0 || g >= ratios.size() || !(ratios[g] > 0.0))
            throw WeightingError("sample " + std::to_string(s) + " belongs to group " + std::to_string(groups[s] + 1) +
                                 " which has no positive batch ratio");
        if (labels[s] < 0 || static_cast<std::size_t>(labels[s]) >= classes)
            throw WeightingError("sample " + std::to_string(s) + " has a label outside the logit range");
        const double w = top / ratios[g];
        out.report.weights[s] = w;

        const float* row = logits.data.data() + s * classes;
        const double m = *std::max_element(row, row + classes);
        double z = 0.0;
        for (std::size_t c = 0; c < classes; ++c) {
            p[c] = std::exp(static_cast<double>(row[c]) - m);
            z += p[c];
        }
        for (auto& v : p) v /= z;
        const auto y = static_cast<std::size_t>(labels[s]);
        const double ce = -std::log(std::max(p[y], 1e-12));
        const double contribution = w * ce * scale;
        out.report.group_loss[g] += contribution;
        out.report.loss += contribution;
        float* grow = out.grad.data.data() + s * classes;
        for (std::size_t c = 0; c < classes; ++c)
            grow[c] = static_cast<float>(w * scale * (p[c] - (c == y ? 1.0 : 0.0)));
    }
    return out;
}

FairLossResult fair_loss(const Tensor& logits, std::span<const int> labels, std::span<const int> groups,
                         const BgmSpec& bgm, bool mean) {
    return fair_loss(logits, labels, groups, bgm.ratios(), mean);
}

TrainResult train_child(const ArchitectureEncoding& enc, const BgmSpec& bgm, const GroupedDataset& train,
                        const TrainConfig& cfg) {
    cfg.validate(train.group_count);
    if (train.size() < cfg.batch_size)
        throw PlanError("training split has " + std::to_string(train.size()) + " samples, fewer than one batch of " +
                        std::to_string(cfg.batch_size));
    if (bgm.groups() != train.group_count) throw PlanError("BGM group count does not match the training split");

    TrainResult result{ChildNetwork::compile(enc, train.shape, derive_seed(cfg.seed, "init")), {}};
    auto& net = result.net;

    // Plain mode uses equal ratios, which makes every weight exactly 1.
    const std::vector<double> loss_ratios =
        cfg.loss == LossMode::Fair ? bgm.ratios() : std::vector<double>(bgm.groups(), 1.0);

    std::size_t step = 0;
    std::vector<int> labels, groups;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto batches = make_batches(train, bgm, cfg.batch_size, derive_seed(cfg.seed, "batches", static_cast<std::uint64_t>(epoch)));
        double epoch_loss = 0.0;
        double lr = cfg.learning_rate;
        for (const auto& batch : batches) {
            labels.clear();
            groups.clear();
            for (auto i : batch.indices) {
                labels.push_back(train.labels[i]);
                groups.push_back(train.groups[i]);
            }
            try {
                const Tensor logits = net.forward(train.gather(batch.indices));
                auto loss = fair_loss(logits, labels, groups, loss_ratios, cfg.mean_loss);
                if (!std::isfinite(loss.report.loss)) throw NumericError("loss is not finite");
                const auto grads = net.backward(loss.grad);
                lr = learning_rate_at(cfg, step);
                net.sgd_step(grads, lr);
                epoch_loss += loss.report.loss;
            } catch (const NumericError& e) {
                throw NumericError("training diverged at epoch " + std::to_string(epoch) + ", step " +
                                   std::to_string(step) + ": " + e.what());
            }
            ++step;
        }
        result.trace.push_back({epoch, step, epoch_loss / static_cast<double>(batches.size()), lr});
    }
    return result;
}

}  // namespace biasless
