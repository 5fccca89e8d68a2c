#ifndef TDCAL_ENVSIM_HPP
#define TDCAL_ENVSIM_HPP

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "rng.hpp"
#include "rollout.hpp"

namespace tdcal {

// Finite-horizon POMDP over enumerable states, observations and actions.
// An episode runs `horizon` decision steps; step rewards come from
// reward(s,a) and a terminal reward is collected on the post-episode state.
struct TabularPOMDP {
    std::string name;
    int n_states = 0;
    int n_obs = 0;
    int n_actions = 0;
    int horizon = 1;
    // transition[s * n_actions + a] is a distribution over next states
    std::vector<std::vector<double>> transition;
    // observation[s] is a distribution over observations
    std::vector<std::vector<double>> observation;
    // reward[s * n_actions + a]
    std::vector<double> reward;
    std::vector<double> terminal_reward;
    std::vector<double> initial_state_dist;

    const std::vector<double>& trans(int s, int a) const { return transition[static_cast<std::size_t>(s) * n_actions + a]; }
    double rew(int s, int a) const { return reward[static_cast<std::size_t>(s) * n_actions + a]; }
    void validate() const;
};

// Observation/action/reward prefix of an episode. `observations` always has
// one more entry than `actions` while a step is pending.
struct History {
    std::vector<int> observations;
    std::vector<double> rewards;
    std::vector<int> actions;

    int steps_observed() const { return static_cast<int>(observations.size()); }
    void push_observation(int x) { observations.push_back(x); }
    void push_action(int a, double r) {
        actions.push_back(a);
        rewards.push_back(r);
    }
    double reward_sum() const {
        double s = 0.0;
        for (double r : rewards) s += r;
        return s;
    }
    // Stable text key "x1|a1:r1:x2|a2:r2:x3|..."
    std::string key() const;
};

// Stochastic policy over histories. Keys are either the full history key or
// the last observation; unseen keys fall back to `fallback`.
struct TabularPolicy {
    enum class Keying { last_observation, full_history };

    Keying keying = Keying::last_observation;
    std::unordered_map<std::string, std::vector<double>> table;
    std::vector<double> fallback;

    std::string key_for(const History& h) const;
    const std::vector<double>& action_dist(const History& h) const;
    int greedy_action(const History& h) const; // argmax, lowest index on ties
    double entropy(const History& h) const;
    void validate(int n_actions) const;
};

// Exact quantities per reachable history, from backward induction.
struct OracleTables {
    // q_values[key][a] = E[sum of rewards from this step on | history, a]
    std::unordered_map<std::string, std::vector<double>> q_values;
    std::unordered_map<std::string, double> value;
    // success_posterior[key] = P(total return >= threshold | history);
    // the empty key "" holds the prior over initial observations
    std::unordered_map<std::string, double> success_posterior;
    double threshold = 0.0;
    int horizon = 0;
    std::size_t history_count = 0;
};

struct GridworldConfig {
    int width = 5;
    int height = 5;
    int n_tasks = 4;
    double slip_prob = 0.0;
    int horizon = 8;
    std::uint64_t seed = 1;
    double epsilon = 0.2;       // epsilon-soft exploration mass
    double policy_flaw_prob = 0.0; // chance a cell's preferred action is wrong
    bool aliased = false;       // merge column pairs in the observation
    bool random_start = true;   // per-episode start cell; fixed cell otherwise
    // one goal for the whole family; tasks then differ only in their
    // policy's flaw pattern and start cells (controller variants of one
    // objective, the cross-task transfer setting)
    bool shared_goal = false;
};

struct Env {
    TabularPOMDP pomdp;
    TabularPolicy policy;
};

// Two-step MDP with states s0,s1: R(s0,a)=0, R(s0,a')=1, R(s1,.)=0; the
// policy always plays a' at s0 and mixes 50/50 at s1. Fully observed.
Env build_example1();

// One goal-reaching task per task id with an epsilon-soft shortest-path
// policy. Reward 1 is collected once, when acting at the goal cell, after
// which the episode sits in an absorbing done state (sparse binary return).
std::vector<Env> build_gridworld(const GridworldConfig& cfg);

struct SimulateOptions {
    double threshold = 1.0;
    bool stop_when_labeled = false; // end the episode once the return reaches the threshold
};

// n labeled rollouts; features are one-hot observations, chosen_probs the
// policy probability of the executed action, entropies the policy entropy.
// Each rollout draws from an independent stream (seed, index).
Dataset simulate(const Env& env, int n, const SimulateOptions& opt, std::uint64_t seed);

// Backward induction over all positive-probability histories. Refuses with
// a budget error rather than truncating.
OracleTables exact_q(const Env& env, double threshold, std::size_t history_budget = 1000000);

struct LookaheadResult {
    int next_state = 0;
    int next_observation = 0;
    double reward = 0.0;
};

LookaheadResult one_step_lookahead(const TabularPOMDP& env, int state, int action, Rng& rng);

// Success-posterior scores for each step of a simulated rollout. The rollout
// must carry its action sequence in meta["actions"].
std::vector<double> oracle_scores(const OracleTables& tables, const Rollout& r);

// Rebuild the history prefix recorded in a simulated rollout (all steps).
History history_from_rollout(const Rollout& r, int t);

} // namespace tdcal

#endif
