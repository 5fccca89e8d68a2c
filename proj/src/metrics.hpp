#ifndef TDCAL_METRICS_HPP
#define TDCAL_METRICS_HPP

#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "predictor.hpp"
#include "rollout.hpp"

namespace tdcal {

// Per-step success probabilities for one rollout. Failure orientation
// (1 - score) is applied inside the ranking metrics, so learned, static and
// oracle scorers stay comparable.
struct ScoredRollout {
    std::string task_id;
    std::vector<double> scores;
    int label = 0;

    int horizon() const { return static_cast<int>(scores.size()); }
};

// (1/N) sum_i (score at the q-quantile step - label)^2
double sequential_brier(std::span<const ScoredRollout> scored, double q);

struct BrierDecomposition {
    double calibration = 0.0;
    double refinement = 0.0;
    double total = 0.0;
};

// Equal-width score bins over [0,1].
BrierDecomposition brier_decomposition(std::span<const double> scores, std::span<const int> labels,
                                       int bins);
// Bins by exact score value; calibration + refinement equals the total.
BrierDecomposition brier_decomposition_exact(std::span<const double> scores,
                                             std::span<const int> labels);

double ece(std::span<const double> scores, std::span<const int> labels, int bins = 10);

// Mann-Whitney AUC of failure scores ranking failed rollouts (label 0) above
// successful ones; ties count one half.
double roc_auc(std::span<const double> failure_scores, std::span<const int> labels);

struct CutoffScore {
    double failure_score = 0.0;
    int label = 0;
};

// Per task, scores are cut at the shortest rollout length observed for that
// task; the scalar is the max failure score up to the cutoff.
std::vector<CutoffScore> fixed_cutoff_scores(std::span<const ScoredRollout> scored);

double roc_auc(std::span<const CutoffScore> cutoff);

// Pearson correlation of average-tied ranks.
double spearman(std::span<const double> xs, std::span<const double> ys);

// One method's evaluation on one split. Scalar terms are computed at the
// per-task minimum-length cutoff; ranking uses the fixed-cutoff protocol.
// roc_auc is NaN when the split is single-class.
struct MetricReport {
    std::map<double, double> brier_by_quantile;
    double calibration = 0.0;
    double refinement = 0.0;
    double ece = 0.0;
    double roc_auc = std::numeric_limits<double>::quiet_NaN();
    double baseline_brier = std::numeric_limits<double>::quiet_NaN();
};

MetricReport evaluate_method(std::span<const ScoredRollout> scored,
                             std::span<const double> quantiles, int bins,
                             double constant_baseline_p);

// scoring adapters
std::vector<ScoredRollout> score_with_predictor(const Predictor& f, const Dataset& d);
std::vector<ScoredRollout> score_with_static(StaticMethod m, const Dataset& d);
std::vector<ScoredRollout> score_constant(double p, const Dataset& d);

// mean success rate; the constant-baseline prediction
double mean_success_rate(const Dataset& d);

} // namespace tdcal

#endif
