#include "metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace tdcal {

double sequential_brier(std::span<const ScoredRollout> scored, double q) {
    if (scored.empty()) throw invalid_argument_error("sequential_brier: no rollouts");
    double sum = 0.0;
    for (const ScoredRollout& s : scored) {
        int t = time_quantile_index(s.horizon(), q);
        double d = s.scores[static_cast<std::size_t>(t) - 1] - static_cast<double>(s.label);
        sum += d * d;
    }
    return sum / static_cast<double>(scored.size());
}

namespace {

struct Bin {
    double score_sum = 0.0;
    double label_sum = 0.0;
    double n = 0.0;
};

BrierDecomposition from_bins(const std::vector<Bin>& bins, std::span<const double> scores,
                             std::span<const int> labels) {
    const double n_total = static_cast<double>(scores.size());
    BrierDecomposition out;
    for (const Bin& b : bins) {
        if (b.n == 0.0) continue;
        double fbar = b.score_sum / b.n;
        double ybar = b.label_sum / b.n;
        out.calibration += b.n * (fbar - ybar) * (fbar - ybar);
        out.refinement += b.n * ybar * (1.0 - ybar);
    }
    out.calibration /= n_total;
    out.refinement /= n_total;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        double d = scores[i] - static_cast<double>(labels[i]);
        out.total += d * d;
    }
    out.total /= n_total;
    return out;
}

void check_scores(std::span<const double> scores, std::span<const int> labels) {
    if (scores.empty()) throw invalid_argument_error("empty score set");
    if (scores.size() != labels.size())
        throw invalid_argument_error("scores and labels differ in length");
}

} // namespace

BrierDecomposition brier_decomposition(std::span<const double> scores, std::span<const int> labels,
                                       int bins) {
    check_scores(scores, labels);
    if (bins < 1) throw invalid_argument_error("brier_decomposition: bins must be >= 1");
    std::vector<Bin> acc(bins);
    for (std::size_t i = 0; i < scores.size(); ++i) {
        int k = std::min(bins - 1, static_cast<int>(scores[i] * bins));
        k = std::max(k, 0);
        acc[k].score_sum += scores[i];
        acc[k].label_sum += labels[i];
        acc[k].n += 1.0;
    }
    return from_bins(acc, scores, labels);
}

BrierDecomposition brier_decomposition_exact(std::span<const double> scores,
                                             std::span<const int> labels) {
    check_scores(scores, labels);
    std::map<double, Bin> groups;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        Bin& b = groups[scores[i]];
        b.score_sum += scores[i];
        b.label_sum += labels[i];
        b.n += 1.0;
    }
    std::vector<Bin> acc;
    acc.reserve(groups.size());
    for (auto& [score, b] : groups) acc.push_back(b);
    return from_bins(acc, scores, labels);
}

double ece(std::span<const double> scores, std::span<const int> labels, int bins) {
    check_scores(scores, labels);
    if (bins < 1) throw invalid_argument_error("ece: bins must be >= 1");
    std::vector<Bin> acc(bins);
    for (std::size_t i = 0; i < scores.size(); ++i) {
        int k = std::min(bins - 1, static_cast<int>(scores[i] * bins));
        k = std::max(k, 0);
        acc[k].score_sum += scores[i];
        acc[k].label_sum += labels[i];
        acc[k].n += 1.0;
    }
    double out = 0.0;
    const double n_total = static_cast<double>(scores.size());
    for (const Bin& b : acc) {
        if (b.n == 0.0) continue;
        out += b.n / n_total * std::abs(b.score_sum / b.n - b.label_sum / b.n);
    }
    return out;
}

namespace {

// average ranks, 1-based, ties share the mean rank
std::vector<double> average_ranks(std::span<const double> xs) {
    std::vector<std::size_t> order(xs.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
    std::vector<double> ranks(xs.size());
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() && xs[order[j + 1]] == xs[order[i]]) ++j;
        double rank = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
        i = j + 1;
    }
    return ranks;
}

} // namespace

double roc_auc(std::span<const double> failure_scores, std::span<const int> labels) {
    check_scores(failure_scores, labels);
    std::size_t n_fail = 0, n_succ = 0;
    for (int y : labels) (y == 0 ? n_fail : n_succ) += 1;
    if (n_fail == 0 || n_succ == 0)
        throw data_error("roc_auc: both labels must be present");
    std::vector<double> ranks = average_ranks(failure_scores);
    double rank_sum = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i] == 0) rank_sum += ranks[i];
    double u = rank_sum - static_cast<double>(n_fail) * (n_fail + 1) / 2.0;
    return u / (static_cast<double>(n_fail) * static_cast<double>(n_succ));
}

std::vector<CutoffScore> fixed_cutoff_scores(std::span<const ScoredRollout> scored) {
    if (scored.empty()) throw invalid_argument_error("fixed_cutoff_scores: no rollouts");
    std::map<std::string, int> cutoff;
    for (const ScoredRollout& s : scored) {
        auto [it, fresh] = cutoff.emplace(s.task_id, s.horizon());
        if (!fresh) it->second = std::min(it->second, s.horizon());
    }
    std::vector<CutoffScore> out;
    out.reserve(scored.size());
    for (const ScoredRollout& s : scored) {
        int t_hat = cutoff.at(s.task_id);
        double best = 0.0;
        for (int t = 1; t <= t_hat; ++t)
            best = std::max(best, 1.0 - s.scores[static_cast<std::size_t>(t) - 1]);
        out.push_back({best, s.label});
    }
    return out;
}

double roc_auc(std::span<const CutoffScore> cutoff) {
    std::vector<double> scores;
    std::vector<int> labels;
    scores.reserve(cutoff.size());
    labels.reserve(cutoff.size());
    for (const CutoffScore& c : cutoff) {
        scores.push_back(c.failure_score);
        labels.push_back(c.label);
    }
    return roc_auc(scores, labels);
}

double spearman(std::span<const double> xs, std::span<const double> ys) {
    if (xs.size() != ys.size())
        throw invalid_argument_error("spearman: length mismatch");
    if (xs.size() < 2) throw invalid_argument_error("spearman: need at least two points");
    std::vector<double> rx = average_ranks(xs);
    std::vector<double> ry = average_ranks(ys);
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        mx += rx[i];
        my += ry[i];
    }
    mx /= static_cast<double>(rx.size());
    my /= static_cast<double>(ry.size());
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0)
        throw data_error("spearman: a rank vector is constant");
    return sxy / std::sqrt(sxx * syy);
}

MetricReport evaluate_method(std::span<const ScoredRollout> scored,
                             std::span<const double> quantiles, int bins,
                             double constant_baseline_p) {
    if (scored.empty()) throw invalid_argument_error("evaluate_method: no rollouts");
    MetricReport report;
    for (double q : quantiles) report.brier_by_quantile[q] = sequential_brier(scored, q);

    std::map<std::string, int> cutoff;
    for (const ScoredRollout& s : scored) {
        auto [it, fresh] = cutoff.emplace(s.task_id, s.horizon());
        if (!fresh) it->second = std::min(it->second, s.horizon());
    }
    std::vector<double> scores;
    std::vector<int> labels;
    double baseline = 0.0;
    for (const ScoredRollout& s : scored) {
        scores.push_back(s.scores[cutoff.at(s.task_id) - 1]);
        labels.push_back(s.label);
        double d = constant_baseline_p - static_cast<double>(s.label);
        baseline += d * d;
    }
    BrierDecomposition dec = brier_decomposition(scores, labels, bins);
    report.calibration = dec.calibration;
    report.refinement = dec.refinement;
    report.ece = ece(scores, labels, bins);
    report.baseline_brier = baseline / static_cast<double>(scored.size());
    try {
        report.roc_auc = roc_auc(fixed_cutoff_scores(scored));
    } catch (const Error&) {
        // single-class split
    }
    return report;
}

std::vector<ScoredRollout> score_with_predictor(const Predictor& f, const Dataset& d) {
    std::vector<ScoredRollout> out;
    out.reserve(d.size());
    for (const Rollout& r : d.rollouts) {
        std::vector<double> scores = f.forward_all(r);
        if (f.accumulate_mode) {
            // cumulative failure scores are unbounded; squash through the
            // same uncertainty-to-success map as the static baselines
            for (double& s : scores) s = uncertainty_to_success(s);
        }
        out.push_back({r.task_id, std::move(scores), r.label});
    }
    return out;
}

std::vector<ScoredRollout> score_with_static(StaticMethod m, const Dataset& d) {
    std::vector<ScoredRollout> out;
    out.reserve(d.size());
    for (const Rollout& r : d.rollouts) {
        std::vector<double> scores(r.steps.size());
        for (int t = 1; t <= r.length(); ++t)
            scores[t - 1] = uncertainty_to_success(static_score(r, m, t));
        out.push_back({r.task_id, std::move(scores), r.label});
    }
    return out;
}

std::vector<ScoredRollout> score_constant(double p, const Dataset& d) {
    std::vector<ScoredRollout> out;
    out.reserve(d.size());
    for (const Rollout& r : d.rollouts)
        out.push_back({r.task_id, std::vector<double>(r.steps.size(), p), r.label});
    return out;
}

double mean_success_rate(const Dataset& d) {
    if (d.rollouts.empty()) throw data_error("mean_success_rate: dataset is empty");
    double sum = 0.0;
    for (const Rollout& r : d.rollouts) sum += r.label;
    return sum / static_cast<double>(d.size());
}

} // namespace tdcal
