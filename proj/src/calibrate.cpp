#include "calibrate.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "rng.hpp"

namespace tdcal {

namespace {

constexpr double kLogClamp = 1e-7;

} // namespace

const char* loss_kind_name(LossKind k) {
    switch (k) {
    case LossKind::td0: return "td0";
    case LossKind::td_lambda: return "td_lambda";
    case LossKind::bce: return "bce";
    case LossKind::mse_mc: return "mse_mc";
    case LossKind::cumulative: return "cumulative";
    }
    return "?";
}

LossKind loss_kind_from_name(const std::string& name) {
    if (name == "td0") return LossKind::td0;
    if (name == "td_lambda") return LossKind::td_lambda;
    if (name == "bce") return LossKind::bce;
    if (name == "mse_mc") return LossKind::mse_mc;
    if (name == "cumulative") return LossKind::cumulative;
    throw config_error("unknown loss kind '" + name + "'");
}

ClassWeights class_weights(const Dataset& d) {
    double n_succ = 0.0, n_fail = 0.0;
    for (const Rollout& r : d.rollouts) (r.label == 1 ? n_succ : n_fail) += 1.0;
    if (n_succ == 0.0 || n_fail == 0.0)
        throw data_error("class_weights: both outcome classes must be present");
    double n = n_succ + n_fail;
    return {n / (2.0 * n_succ), n / (2.0 * n_fail)};
}

namespace {

// squared-error loss of live scores against fixed targets, shared by the
// TD variants and the MC regression
double squared_target_loss(const Predictor& f, const Rollout& r,
                           std::span<const double> targets, double weight,
                           std::span<double> grad) {
    std::vector<double> scores = f.forward_all(r);
    double loss = 0.0;
    std::vector<double> dscore(scores.size(), 0.0);
    for (std::size_t t = 0; t < scores.size(); ++t) {
        double d = scores[t] - targets[t];
        loss += d * d;
        dscore[t] = 2.0 * weight * d;
    }
    if (!grad.empty()) f.add_gradient(r, dscore, grad);
    return weight * loss;
}

} // namespace

double td0_loss(const Predictor& f, const Predictor& f_target, const Rollout& r, int y,
                 double weight, std::span<double> grad) {
    const int T = r.length();
    std::vector<double> targets(T);
    std::vector<double> frozen = f_target.forward_all(r);
    for (int t = 0; t + 1 < T; ++t) targets[t] = frozen[t + 1];
    targets[T - 1] = static_cast<double>(y);
    return squared_target_loss(f, r, targets, weight, grad);
}

std::vector<double> td_lambda_targets(std::span<const double> target_scores, int y, double lambda) {
    if (!(lambda >= 0.0 && lambda <= 1.0))
        throw invalid_argument_error("td_lambda_targets: lambda must lie in [0,1]");
    if (target_scores.empty())
        throw invalid_argument_error("td_lambda_targets: empty score sequence");
    const std::size_t T = target_scores.size();
    std::vector<double> g(T);
    g[T - 1] = static_cast<double>(y);
    for (std::size_t t = T - 1; t-- > 0;)
        g[t] = (1.0 - lambda) * target_scores[t + 1] + lambda * g[t + 1];
    return g;
}

double td_lambda_loss(const Predictor& f, const Predictor& f_target, const Rollout& r, int y,
                      double lambda, double weight, std::span<double> grad) {
    std::vector<double> frozen = f_target.forward_all(r);
    std::vector<double> targets = td_lambda_targets(frozen, y, lambda);
    return squared_target_loss(f, r, targets, weight, grad);
}

double bce_loss(const Predictor& f, const Rollout& r, int y, double weight,
                std::span<double> grad) {
    std::vector<double> scores = f.forward_all(r);
    const double n = static_cast<double>(scores.size());
    double loss = 0.0;
    std::vector<double> dscore(scores.size(), 0.0);
    for (std::size_t t = 0; t < scores.size(); ++t) {
        double p = scores[t];
        if (y == 1) {
            loss += -std::log(std::max(p, kLogClamp));
            if (p > kLogClamp) dscore[t] = -weight / (p * n);
        } else {
            loss += -std::log(std::max(1.0 - p, kLogClamp));
            if (1.0 - p > kLogClamp) dscore[t] = weight / ((1.0 - p) * n);
        }
    }
    if (!grad.empty()) f.add_gradient(r, dscore, grad);
    return weight * loss / n;
}

double mse_mc_loss(const Predictor& f, const Rollout& r, int y, double weight,
                   std::span<double> grad) {
    std::vector<double> targets(r.steps.size(), static_cast<double>(y));
    return squared_target_loss(f, r, targets, weight, grad);
}

double cumulative_loss(const Predictor& f, const Rollout& r, int failure_label,
                            double weight, std::span<double> grad) {
    if (!f.accumulate_mode)
        throw invalid_argument_error("cumulative_loss: predictor must be in accumulate mode");
    std::vector<double> scores = f.forward_all(r);
    double loss = 0.0;
    std::vector<double> dscore(scores.size(), 0.0);
    for (std::size_t t = 0; t < scores.size(); ++t) {
        if (failure_label == 1) {
            loss += static_cast<double>(t + 1) - scores[t];
            dscore[t] = -weight;
        } else {
            loss += scores[t];
            dscore[t] = weight;
        }
    }
    if (!grad.empty()) f.add_gradient(r, dscore, grad);
    return weight * loss;
}

double rollout_loss(const TrainConfig& cfg, const Predictor& f, const Predictor& f_target,
                    const Rollout& r, const ClassWeights& w, std::span<double> grad) {
    const double weight = w.of(r.label);
    switch (cfg.loss) {
    case LossKind::td0: return td0_loss(f, f_target, r, r.label, weight, grad);
    case LossKind::td_lambda:
        return td_lambda_loss(f, f_target, r, r.label, cfg.lambda, weight, grad);
    case LossKind::bce: return bce_loss(f, r, r.label, weight, grad);
    case LossKind::mse_mc: return mse_mc_loss(f, r, r.label, weight, grad);
    case LossKind::cumulative:
        return cumulative_loss(f, r, 1 - r.label, weight, grad);
    }
    throw invalid_argument_error("rollout_loss: unknown loss kind");
}

std::span<const double> default_quantile_grid() {
    static const double grid[] = {0.0, 0.2, 0.4, 0.6, 0.8};
    return grid;
}

namespace {

double validation_brier(const Predictor& f, const Dataset& val) {
    std::vector<ScoredRollout> scored = score_with_predictor(f, val);
    double sum = 0.0;
    for (double q : default_quantile_grid()) sum += sequential_brier(scored, q);
    return sum / static_cast<double>(default_quantile_grid().size());
}

} // namespace

TrainLog train(const Dataset& data, Predictor& f, const TrainConfig& cfg, const Dataset* val) {
    if (data.rollouts.empty()) throw data_error("train: dataset is empty");
    if (cfg.epochs < 1) throw config_error("train: epochs must be >= 1");
    if (cfg.batch_rollouts < 1) throw config_error("train: batch_rollouts must be >= 1");
    if (cfg.target_update_period < 1) throw config_error("train: target_update_period must be >= 1");
    if (!(cfg.lambda >= 0.0 && cfg.lambda <= 1.0))
        throw config_error("train: lambda must lie in [0,1]");

    ClassWeights weights;
    if (cfg.class_weighting) weights = class_weights(data);

    TargetNetwork target(f);
    OptimizerState opt;
    opt.lr = cfg.lr;
    opt.weight_decay = cfg.weight_decay;
    LrSchedule schedule{cfg.lr, cfg.lr_step_size, cfg.lr_gamma};

    Rng rng(cfg.seed);
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);

    TrainLog log;
    std::vector<double> grad(f.theta.size());
    std::unique_ptr<Predictor> best;
    double best_brier = std::numeric_limits<double>::infinity();

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        double lr = schedule.rate(epoch);
        opt.lr = lr;
        rng.shuffle(order);

        double epoch_loss = 0.0;
        int batches = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_rollouts) {
            std::size_t stop = std::min(order.size(), start + cfg.batch_rollouts);
            double inv = 1.0 / static_cast<double>(stop - start);
            std::fill(grad.begin(), grad.end(), 0.0);
            double loss = 0.0;
            for (std::size_t i = start; i < stop; ++i) {
                const Rollout& r = data.rollouts[order[i]];
                ClassWeights scaled{weights.success * inv, weights.failure * inv};
                loss += rollout_loss(cfg, f, target.predictor(), r, scaled, grad);
            }
            if (cfg.l2_reg != 0.0) {
                for (std::size_t i = 0; i < f.theta.size(); ++i) {
                    loss += cfg.l2_reg * f.theta[i] * f.theta[i];
                    grad[i] += 2.0 * cfg.l2_reg * f.theta[i];
                }
            }
            if (!std::isfinite(loss))
                throw numeric_error("train: non-finite loss at epoch " + std::to_string(epoch) +
                                    ", batch " + std::to_string(batches) + " (" +
                                    loss_kind_name(cfg.loss) + ", lr " + std::to_string(lr) + ")");
            adamw_step(opt, f.theta, grad);
            ++log.optimizer_steps;
            target.step();
            if (target.staleness() >= cfg.target_update_period) target.sync(f);
            epoch_loss += loss;
            ++batches;
        }

        EpochLog entry;
        entry.epoch = epoch;
        entry.train_loss = epoch_loss / static_cast<double>(batches);
        entry.lr = lr;
        if (val) {
            entry.val_brier = validation_brier(f, *val);
            if (entry.val_brier < best_brier) {
                best_brier = entry.val_brier;
                best = f.clone();
                log.best_epoch = epoch;
            }
        }
        log.epochs.push_back(entry);
    }

    if (best) f.theta = best->theta;
    return log;
}

} // namespace tdcal
