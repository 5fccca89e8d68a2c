#ifndef TDCAL_CALIBRATE_HPP
#define TDCAL_CALIBRATE_HPP

#include <cstdint>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "metrics.hpp"
#include "predictor.hpp"
#include "rollout.hpp"

namespace tdcal {

enum class LossKind { td0, td_lambda, bce, mse_mc, cumulative };

const char* loss_kind_name(LossKind k);
LossKind loss_kind_from_name(const std::string& name);

struct TrainConfig {
    LossKind loss = LossKind::td0;
    double lambda = 0.8; // td_lambda trace
    double lr = 1e-2;
    int lr_step_size = 200;
    double lr_gamma = 1.0;
    double weight_decay = 0.01;
    double l2_reg = 0.0;
    int target_update_period = 10; // optimizer steps between target syncs
    int epochs = 100;
    int batch_rollouts = 32;
    std::uint64_t seed = 0;
    bool class_weighting = false;
};

// Frozen parameter snapshot used for bootstrap targets.
class TargetNetwork {
public:
    explicit TargetNetwork(const Predictor& f) : frozen_(f.clone()) {}

    void sync(const Predictor& f) {
        frozen_->theta = f.theta;
        staleness_ = 0;
    }
    void step() { ++staleness_; }
    int staleness() const { return staleness_; }
    const Predictor& predictor() const { return *frozen_; }

private:
    std::unique_ptr<Predictor> frozen_;
    int staleness_ = 0;
};

struct ClassWeights {
    double success = 1.0;
    double failure = 1.0;
    double of(int label) const { return label == 1 ? success : failure; }
};

// w_k = N / (2 N_k); requires both classes.
ClassWeights class_weights(const Dataset& d);

// Every loss below returns the weighted per-rollout loss and, when grad is
// non-empty, accumulates d(loss)/d(theta) for the live predictor into it.
// Bootstrap targets come from the frozen network and carry no gradient.

// sum_{t<T} (f(h_t) - f_target(h_{t+1}))^2 + (f(h_T) - y)^2
double td0_loss(const Predictor& f, const Predictor& f_target, const Rollout& r, int y,
                 double weight = 1.0, std::span<double> grad = {});

// G_T = y, G_t = (1-lambda) f_target(h_{t+1}) + lambda G_{t+1}
std::vector<double> td_lambda_targets(std::span<const double> target_scores, int y, double lambda);

// sum_t (f(h_t) - G_t)^2 against the lambda-return targets
double td_lambda_loss(const Predictor& f, const Predictor& f_target, const Rollout& r, int y,
                      double lambda, double weight = 1.0, std::span<double> grad = {});

// mean_t of the clamped cross entropy against the terminal label
double bce_loss(const Predictor& f, const Rollout& r, int y, double weight = 1.0,
                std::span<double> grad = {});

// sum_t (f(h_t) - y)^2
double mse_mc_loss(const Predictor& f, const Rollout& r, int y, double weight = 1.0,
                   std::span<double> grad = {});

// Cumulative-score objective: a failed rollout (failure_label = 1) pays
// sum_t (t - f(e_t)), a successful one pays sum_t f(e_t). Requires the
// predictor's accumulate mode.
double cumulative_loss(const Predictor& f, const Rollout& r, int failure_label,
                            double weight = 1.0, std::span<double> grad = {});

// Dispatch on config.loss; maps the success label to the convention each
// loss expects.
double rollout_loss(const TrainConfig& cfg, const Predictor& f, const Predictor& f_target,
                    const Rollout& r, const ClassWeights& w, std::span<double> grad = {});

struct EpochLog {
    int epoch = 0;
    double train_loss = 0.0;
    double val_brier = std::numeric_limits<double>::quiet_NaN();
    double lr = 0.0;
};

struct TrainLog {
    std::vector<EpochLog> epochs;
    long long optimizer_steps = 0;
    int best_epoch = 0; // epoch of the kept checkpoint, 0 when no val set
};

// Mini-batch training with a periodically synced target network. When a
// validation set is given the parameters with the best (lowest) validation
// sequential Brier are kept.
TrainLog train(const Dataset& data, Predictor& f, const TrainConfig& cfg,
               const Dataset* val = nullptr);

// quantile grid used for validation Brier and reports
std::span<const double> default_quantile_grid();

} // namespace tdcal

#endif
