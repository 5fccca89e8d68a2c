#ifndef TDCAL_CONFORMAL_HPP
#define TDCAL_CONFORMAL_HPP

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "errors.hpp"

namespace tdcal {

// Time-indexed upper band delta_t = mu_t + scale * modulation_t fitted on
// failure-score trajectories of successful rollouts. A fresh successful
// rollout stays below delta for all t with probability 1 - alpha under
// exchangeability.
struct ConformalBand {
    double alpha = 0.1;
    double scale = 0.0; // h
    std::vector<double> mu;
    std::vector<double> modulation; // s(t), floored away from zero
    std::vector<double> delta;
    int n_cal_a = 0;
    int n_cal_b = 0;
    std::uint64_t split_seed = 0;

    int horizon() const { return static_cast<int>(delta.size()); }
    // delta held at its final value beyond the fitted horizon
    double threshold_at(int t) const;
};

// Sequences shorter than the longest are right-padded by holding their last
// value. The seeded split sends half of the sequences to the modulation set.
ConformalBand fit_band(const std::vector<std::vector<double>>& failure_scores, double alpha,
                       std::uint64_t split_seed);

// Core fit on an explicit split (the seeded fit delegates here).
ConformalBand fit_band_presplit(const std::vector<std::vector<double>>& cal_a,
                                const std::vector<std::vector<double>>& cal_b, double alpha);

// Streaming first-crossing monitor; one instance per episode.
class StopMonitor {
public:
    explicit StopMonitor(const ConformalBand& band) : band_(&band) {}

    // feeds the next failure score; returns the step index on the first
    // crossing, nothing otherwise
    std::optional<int> observe(double failure_score) {
        ++step_;
        if (failure_score > band_->threshold_at(step_)) return step_;
        return std::nullopt;
    }
    int steps_seen() const { return step_; }

private:
    const ConformalBand* band_;
    int step_ = 0;
};

// First step whose failure score exceeds the band, over a complete rollout.
std::optional<int> early_stop_step(const ConformalBand& band, std::span<const double> failure_scores);

// Fraction of sequences with max_t (score_t - delta_t) <= 0.
double coverage_eval(const ConformalBand& band,
                     const std::vector<std::vector<double>>& failure_scores);

struct TprFprPoint {
    double alpha = 0.0;
    double tpr = 0.0;
    double fpr = 0.0;
};

// Refits the band per alpha on the calibration successes (same split seed)
// and runs the monitor over every test sequence.
std::vector<TprFprPoint> tpr_fpr_sweep(const std::vector<std::vector<double>>& cal_success_scores,
                                       const std::vector<std::vector<double>>& test_scores,
                                       std::span<const int> test_labels,
                                       std::span<const double> alpha_grid,
                                       std::uint64_t split_seed);

void save_band(const ConformalBand& band, const std::string& path, const std::string& meta);
ConformalBand load_band(const std::string& path);

} // namespace tdcal

#endif
