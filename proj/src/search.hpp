#ifndef TDCAL_SEARCH_HPP
#define TDCAL_SEARCH_HPP

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "envsim.hpp"
#include "predictor.hpp"

namespace tdcal {

// Success-probability score of a live history paired with the greedy action
// about to be taken there. Learned predictors consume only the history;
// the oracle conditions on the action through its Q table.
using SuccessScorer = std::function<double(const History&, int action)>;

SuccessScorer oracle_scorer(const OracleTables& tables);
// Builds one-hot feature prefixes for the predictor (n_obs feature width).
SuccessScorer predictor_scorer(const Predictor& f, int n_obs);

struct SearchConfig {
    int samples = 10;           // M candidates per searched step
    double threshold = -1.0;    // skip search when 1 - f(h) <= threshold
    double temperature = 1.5;   // candidate sampling temperature
    std::uint64_t seed = 0;
};

// Sample from softmax(log p / tau). tau <= 1e-6 is treated as the argmax
// limit with lowest-index ties.
int sample_with_temperature(std::span<const double> probs, double tau, Rng& rng);

struct SearchDecision {
    int action = 0;
    bool searched = false;
};

// One decision of the guided search: greedy action unless the failure
// confidence clears the gate, then M sampled candidates, one lookahead step
// each, scored by f on the extended history; ties go to the lowest
// candidate index. `search_rng` is consumed only by candidate sampling and
// lookahead draws.
SearchDecision guided_action_search(const Env& env, int state, const History& history,
                                    const SuccessScorer& f, const SearchConfig& cfg,
                                    Rng& search_rng);

struct EpisodeStats {
    int label = 0;
    int length = 0;
    int searched_steps = 0;
};

enum class ActionMode { policy_sample, greedy, guided };

// Runs one episode; env transitions draw from `env_rng`, search internals
// from `search_rng`.
EpisodeStats run_episode(const Env& env, double threshold, ActionMode mode,
                         const SuccessScorer& f, const SearchConfig& cfg, Rng& env_rng,
                         Rng& search_rng);

struct SearchExperimentRow {
    std::string task;
    std::string mode; // "greedy", "policy", or "search"
    int samples = 0;
    double temperature = 0.0;
    double threshold = 0.0;
    double success_rate = 0.0;
    double mean_length = 0.0;
    double mean_searched_steps = 0.0;
    int episodes = 0;
};

// Greedy baseline plus one row per (env, config); episode e of every run
// draws from stream (seed, e), so runs with identical action choices
// reproduce identical trajectories.
std::vector<SearchExperimentRow> run_search_experiment(std::span<const Env> envs,
                                                       const SuccessScorer& f,
                                                       std::span<const SearchConfig> grid,
                                                       int episodes_per_task, double threshold,
                                                       std::uint64_t seed);

} // namespace tdcal

#endif
