#include "biasless/evaluator.hpp"

#include "biasless/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>

namespace biasless {

namespace {

std::size_t pick_privileged(std::span<const std::size_t> sizes, const FairnessOptions& opts) {
    if (opts.privileged_group) {
        if (*opts.privileged_group >= sizes.size())
            throw EvaluationError("privileged group " + std::to_string(*opts.privileged_group + 1) + " does not exist");
        return *opts.privileged_group;
    }
    return static_cast<std::size_t>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
}

struct Rates {
    double unprivileged = 0.0;
    double privileged = 0.0;
};

// Favorable-outcome rates from counts, pooling the unprivileged groups.
Rates rates_from_counts(std::span<const GroupTally> tallies, std::size_t privileged) {
    std::size_t uc = 0, ut = 0;
    for (std::size_t g = 0; g < tallies.size(); ++g) {
        if (g == privileged) continue;
        uc += tallies[g].correct;
        ut += tallies[g].total;
    }
    const auto& p = tallies[privileged];
    if (p.total == 0) throw EvaluationError("privileged group " + std::to_string(privileged + 1) + " is empty");
    if (ut == 0) throw EvaluationError("unprivileged groups are empty");
    return {static_cast<double>(uc) / static_cast<double>(ut),
            static_cast<double>(p.correct) / static_cast<double>(p.total)};
}

std::vector<GroupTally> tally(std::span<const SampleOutcome> outcomes, std::size_t groups) {
    std::vector<GroupTally> out(groups);
    for (const auto& o : outcomes) {
        if (o.group >= groups) throw EvaluationError("sample outcome references group " + std::to_string(o.group + 1));
        ++out[o.group].total;
        out[o.group].correct += o.correct ? 1 : 0;
    }
    return out;
}

std::vector<std::size_t> totals(std::span<const GroupTally> tallies) {
    std::vector<std::size_t> out;
    for (const auto& t : tallies) out.push_back(t.total);
    return out;
}

double di_from_rates(const Rates& r, const FairnessOptions& opts) {
    if (r.privileged == 0.0 && opts.allow_degenerate) return std::numeric_limits<double>::quiet_NaN();
    if (r.privileged == 0.0) throw DegenerateMetricError("disparate impact undefined: privileged favorable rate is 0");
    return r.unprivileged / r.privileged;
}

}  // namespace

double unfairness_score(std::span<const double> group_acc, double overall_acc) {
    double u = 0.0;
    for (double a : group_acc) u += std::abs(a - overall_acc);
    return u;
}

double disparate_impact(std::span<const SampleOutcome> outcomes, std::size_t groups, const FairnessOptions& opts) {
    const auto t = tally(outcomes, groups);
    if (groups == 1) return 1.0;
    return di_from_rates(rates_from_counts(t, pick_privileged(totals(t), opts)), opts);
}

double statistical_parity_difference(std::span<const SampleOutcome> outcomes, std::size_t groups,
                                     const FairnessOptions& opts) {
    const auto t = tally(outcomes, groups);
    if (groups == 1) return 0.0;
    const Rates r = rates_from_counts(t, pick_privileged(totals(t), opts));
    return r.unprivileged - r.privileged;
}

EvalReport report_from_tallies(std::span<const GroupTally> tallies, const FairnessOptions& opts) {
    if (tallies.empty()) throw EvaluationError("no groups to evaluate");
    EvalReport r;
    std::int64_t correct = 0, total = 0;
    for (std::size_t g = 0; g < tallies.size(); ++g) {
        if (tallies[g].total == 0) throw EvaluationError("group " + std::to_string(g + 1) + " is empty");
        if (tallies[g].correct > tallies[g].total) throw EvaluationError("group " + std::to_string(g + 1) + " has more correct than total");
        correct += static_cast<std::int64_t>(tallies[g].correct);
        total += static_cast<std::int64_t>(tallies[g].total);
        r.group_counts.push_back(tallies[g].total);
        r.group_correct.push_back(tallies[g].correct);
        r.group_acc.push_back(static_cast<double>(tallies[g].correct) / static_cast<double>(tallies[g].total));
    }
    r.overall_acc = static_cast<double>(correct) / static_cast<double>(total);
    // |c_i/t_i − C/T| = |c_i·T − C·t_i| / (t_i·T), numerators exact in integers.
    r.unfairness = 0.0;
    for (const auto& t : tallies) {
        const std::int64_t num = static_cast<std::int64_t>(t.correct) * total - correct * static_cast<std::int64_t>(t.total);
        r.unfairness += static_cast<double>(num < 0 ? -num : num) /
                        (static_cast<double>(t.total) * static_cast<double>(total));
    }
    if (tallies.size() == 1) {
        r.di = 1.0;
        r.spd = 0.0;
    } else {
        const Rates rates = rates_from_counts(tallies, pick_privileged(r.group_counts, opts));
        r.di = di_from_rates(rates, opts);
        r.spd = rates.unprivileged - rates.privileged;
    }
    return r;
}

EvalReport report_from_accuracies(std::span<const double> group_acc, std::span<const std::size_t> group_sizes,
                                  const FairnessOptions& opts) {
    if (group_acc.size() != group_sizes.size() || group_acc.empty())
        throw EvaluationError("group accuracies and sizes disagree");
    EvalReport r;
    double weighted = 0.0, n = 0.0;
    for (std::size_t g = 0; g < group_acc.size(); ++g) {
        if (group_sizes[g] == 0) throw EvaluationError("group " + std::to_string(g + 1) + " is empty");
        if (!(group_acc[g] >= 0.0 && group_acc[g] <= 1.0))
            throw EvaluationError("group " + std::to_string(g + 1) + " accuracy outside [0, 1]");
        weighted += static_cast<double>(group_sizes[g]) * group_acc[g];
        n += static_cast<double>(group_sizes[g]);
        r.group_counts.push_back(group_sizes[g]);
        r.group_correct.push_back(static_cast<std::size_t>(std::llround(group_acc[g] * static_cast<double>(group_sizes[g]))));
    }
    r.group_acc.assign(group_acc.begin(), group_acc.end());
    r.overall_acc = weighted / n;
    r.unfairness = unfairness_score(r.group_acc, r.overall_acc);
    if (group_acc.size() == 1) return r;

    const std::size_t p = pick_privileged(group_sizes, opts);
    double uw = 0.0, un = 0.0;
    for (std::size_t g = 0; g < group_acc.size(); ++g) {
        if (g == p) continue;
        uw += static_cast<double>(group_sizes[g]) * group_acc[g];
        un += static_cast<double>(group_sizes[g]);
    }
    const Rates rates{uw / un, group_acc[p]};
    r.di = di_from_rates(rates, opts);
    r.spd = rates.unprivileged - rates.privileged;
    return r;
}

std::vector<int> predict(ChildNetwork& net, const GroupedDataset& ds, std::size_t batch_size) {
    std::vector<int> out;
    out.reserve(ds.size());
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < ds.size(); start += batch_size) {
        const std::size_t end = std::min(ds.size(), start + batch_size);
        idx.resize(end - start);
        std::iota(idx.begin(), idx.end(), start);
        const Tensor logits = net.forward(ds.gather(idx));
        const std::size_t classes = logits.dim(1);
        for (std::size_t i = 0; i < idx.size(); ++i) {
            const float* row = logits.data.data() + i * classes;
            // max_element returns the first maximum: lowest class index wins ties.
            out.push_back(static_cast<int>(std::max_element(row, row + classes) - row));
        }
    }
    net.invalidate_cache();
    return out;
}

EvalReport evaluate(ChildNetwork& net, const GroupedDataset& ds, const FairnessOptions& opts) {
    std::vector<GroupTally> tallies(ds.group_count);
    for (int g : ds.groups) ++tallies[static_cast<std::size_t>(g)].total;
    for (std::size_t g = 0; g < tallies.size(); ++g)
        if (tallies[g].total == 0) throw EvaluationError("validation group " + std::to_string(g + 1) + " is empty");
    const auto pred = predict(net, ds);
    for (std::size_t i = 0; i < pred.size(); ++i)
        if (pred[i] == ds.labels[i]) ++tallies[static_cast<std::size_t>(ds.groups[i])].correct;
    return report_from_tallies(tallies, opts);
}

}  // namespace biasless
