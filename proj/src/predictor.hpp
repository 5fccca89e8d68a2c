#ifndef TDCAL_PREDICTOR_HPP
#define TDCAL_PREDICTOR_HPP

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "rollout.hpp"

namespace tdcal {

enum class PredictorKind { feedforward, recurrent };

const char* predictor_kind_name(PredictorKind k);

struct PredictorDims {
    int input_dim = 0;
    int hidden = 32;
    int window = 1; // feedforward receptive field (steps)
    int proj = 0;   // recurrent input projection width; 0 = same as hidden
};

// Success predictor with a flat parameter vector. Scores live in (0,1)
// unless accumulate_mode is set, in which case the score at step t is the
// running sum of the per-step logistic outputs (the cumulative scheme some
// failure detectors train against).
class Predictor {
public:
    virtual ~Predictor() = default;

    virtual PredictorKind kind() const = 0;
    virtual const PredictorDims& dims() const = 0;
    virtual std::unique_ptr<Predictor> clone() const = 0;

    // scores for t = 1..T in one pass
    virtual std::vector<double> forward_all(const Rollout& r) const = 0;
    double forward(const Rollout& r, int t) const;

    // d(loss)/d(theta) += contribution of this rollout, where dscore[t-1] is
    // d(loss)/d(score_t). Handles accumulate_mode internally.
    virtual void add_gradient(const Rollout& r, std::span<const double> dscore,
                              std::span<double> grad) const = 0;

    std::size_t param_count() const { return theta.size(); }

    std::vector<double> theta;
    bool accumulate_mode = false;

protected:
    // maps accumulated-score gradients back to per-step output gradients
    std::vector<double> per_step_dscore(std::span<const double> dscore) const;
};

// Glorot-uniform weights, zero biases, deterministic in the seed.
std::unique_ptr<Predictor> make_predictor(PredictorKind kind, const PredictorDims& dims,
                                          std::uint64_t seed);

void save_predictor(const Predictor& p, const std::string& path);
std::unique_ptr<Predictor> load_predictor(const std::string& path);

// AdamW with decoupled weight decay (decay scales the weights directly,
// before the moment update).
struct OptimizerState {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
    long long step = 0;
    std::vector<double> m;
    std::vector<double> v;
};

void adamw_step(OptimizerState& st, std::span<double> params, std::span<const double> grad);

struct LrSchedule {
    double base = 1e-3;
    int step_size = 200; // epochs per decay
    double gamma = 1.0;

    double rate(int epoch) const; // epoch is 1-based
};

} // namespace tdcal

#endif
