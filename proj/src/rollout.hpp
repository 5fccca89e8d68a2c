#ifndef TDCAL_ROLLOUT_HPP
#define TDCAL_ROLLOUT_HPP

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "errors.hpp"

namespace tdcal {

// One environment step as logged by a policy rollout. `features` is the
// predictor input; `chosen_probs` holds the probability the policy assigned
// to the executed token, one entry per action dimension; `entropies` the
// per-dimension token-distribution entropies. `top_k_probs` optionally keeps
// the k largest token probabilities per dimension, sorted descending.
struct StepRecord {
    std::vector<double> features;
    std::vector<double> chosen_probs;
    std::vector<double> entropies;
    double reward = 0.0;
    std::optional<std::vector<std::vector<double>>> top_k_probs;
};

struct Rollout {
    std::string task_id;
    std::vector<StepRecord> steps;
    int label = 0; // 1 = success
    std::map<std::string, std::string> meta;

    int length() const { return static_cast<int>(steps.size()); }
};

struct Dataset {
    std::vector<Rollout> rollouts;
    std::set<std::string> task_ids;

    std::size_t size() const { return rollouts.size(); }
    void add(Rollout r) {
        task_ids.insert(r.task_id);
        rollouts.push_back(std::move(r));
    }
};

struct SplitSpec {
    std::uint64_t seed = 0;
    int unseen_task_count = 0;
    double train_fraction = 0.6;
};

struct TaskSplit {
    Dataset train;
    Dataset val_seen;
    Dataset val_unseen;
};

enum class StaticMethod {
    max_prob,
    avg_prob,
    running_avg_prob,
    avg_entropy,
    running_avg_entropy,
};

const char* static_method_name(StaticMethod m);
StaticMethod static_method_from_name(const std::string& name);

// Throws data_error describing the first violated invariant. `where` names
// the rollout in messages (index or line number).
void validate_rollout(const Rollout& r, const std::string& where);
void validate_dataset(const Dataset& d);

Dataset load_rollouts(const std::string& path);
void save_rollouts(const Dataset& d, const std::string& path);

// Unseen tasks chosen by seeded shuffle; remaining tasks' rollouts split
// per task at train_fraction, stratified by label when both labels occur.
TaskSplit split_by_task(const Dataset& d, const SplitSpec& spec);

// 1 iff the summed step rewards reach threshold c.
int label_from_rewards(const Rollout& r, double c);

// Uncertainty score at step t (1-based); larger = more uncertain.
double static_score(const Rollout& r, StaticMethod method, int t);

// Success-probability proxy for an uncertainty score: exp(-u). For a
// single-dimension max_prob score this is exactly the chosen-token
// probability.
inline double uncertainty_to_success(double u) { return std::exp(-u); }

// clamp(ceil(q * T), 1, T); q = 0 maps to the first step.
int time_quantile_index(int horizon, double q);

} // namespace tdcal

#endif
