#include "envsim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace tdcal {

namespace {

constexpr double kDistTolerance = 1e-12;

void check_distribution(const std::vector<double>& p, int expected_size, const std::string& what) {
    if (static_cast<int>(p.size()) != expected_size)
        throw invalid_argument_error(what + ": wrong distribution size");
    double sum = 0.0;
    for (double v : p) {
        if (!(v >= 0.0) || !std::isfinite(v))
            throw invalid_argument_error(what + ": negative or non-finite probability");
        sum += v;
    }
    if (std::abs(sum - 1.0) > kDistTolerance)
        throw invalid_argument_error(what + ": probabilities sum to " + std::to_string(sum));
}

std::string format_reward(double r) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", r);
    return buf;
}

} // namespace

void TabularPOMDP::validate() const {
    if (n_states < 1 || n_obs < 1 || n_actions < 1)
        throw invalid_argument_error("pomdp: dimensions must be positive");
    if (horizon < 1) throw invalid_argument_error("pomdp: horizon must be >= 1");
    if (transition.size() != static_cast<std::size_t>(n_states) * n_actions)
        throw invalid_argument_error("pomdp: transition table size mismatch");
    if (observation.size() != static_cast<std::size_t>(n_states))
        throw invalid_argument_error("pomdp: observation table size mismatch");
    if (reward.size() != static_cast<std::size_t>(n_states) * n_actions)
        throw invalid_argument_error("pomdp: reward table size mismatch");
    if (terminal_reward.size() != static_cast<std::size_t>(n_states))
        throw invalid_argument_error("pomdp: terminal reward size mismatch");
    for (const auto& t : transition) check_distribution(t, n_states, "pomdp transition");
    for (const auto& o : observation) check_distribution(o, n_obs, "pomdp observation");
    check_distribution(initial_state_dist, n_states, "pomdp initial state dist");
    for (double r : reward)
        if (!std::isfinite(r)) throw invalid_argument_error("pomdp: non-finite reward");
    for (double r : terminal_reward)
        if (!std::isfinite(r)) throw invalid_argument_error("pomdp: non-finite terminal reward");
}

std::string History::key() const {
    std::string out;
    for (std::size_t i = 0; i < observations.size(); ++i) {
        if (i > 0) {
            out += '|';
            out += std::to_string(actions[i - 1]);
            out += ':';
            out += format_reward(rewards[i - 1]);
            out += ':';
        }
        out += std::to_string(observations[i]);
    }
    return out;
}

std::string TabularPolicy::key_for(const History& h) const {
    if (keying == Keying::full_history) return h.key();
    if (h.observations.empty())
        throw invalid_argument_error("policy: history has no observation");
    return std::to_string(h.observations.back());
}

const std::vector<double>& TabularPolicy::action_dist(const History& h) const {
    auto it = table.find(key_for(h));
    if (it != table.end()) return it->second;
    if (fallback.empty())
        throw invalid_argument_error("policy: unseen history key and no fallback distribution");
    return fallback;
}

int TabularPolicy::greedy_action(const History& h) const {
    const std::vector<double>& d = action_dist(h);
    int best = 0;
    for (int a = 1; a < static_cast<int>(d.size()); ++a)
        if (d[a] > d[best]) best = a;
    return best;
}

double TabularPolicy::entropy(const History& h) const {
    const std::vector<double>& d = action_dist(h);
    double e = 0.0;
    for (double p : d)
        if (p > 0.0) e -= p * std::log(p);
    return e;
}

void TabularPolicy::validate(int n_actions) const {
    for (const auto& [key, dist] : table) check_distribution(dist, n_actions, "policy[" + key + "]");
    if (!fallback.empty()) check_distribution(fallback, n_actions, "policy fallback");
}

Env build_example1() {
    Env env;
    TabularPOMDP& m = env.pomdp;
    m.name = "example1";
    m.n_states = 3; // s0, s1, absorbing end
    m.n_obs = 3;
    m.n_actions = 2; // 0 = a, 1 = a'
    m.horizon = 2;
    m.transition.assign(std::size_t(3) * 2, {});
    m.transition[0 * 2 + 0] = {0, 1, 0};
    m.transition[0 * 2 + 1] = {0, 1, 0};
    m.transition[1 * 2 + 0] = {0, 0, 1};
    m.transition[1 * 2 + 1] = {0, 0, 1};
    m.transition[2 * 2 + 0] = {0, 0, 1};
    m.transition[2 * 2 + 1] = {0, 0, 1};
    m.observation = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
    m.reward = {0, 1, 0, 0, 0, 0};
    m.terminal_reward = {0, 0, 0};
    m.initial_state_dist = {1, 0, 0};
    m.validate();

    TabularPolicy& pi = env.policy;
    pi.keying = TabularPolicy::Keying::last_observation;
    pi.table["0"] = {0.0, 1.0};
    pi.table["1"] = {0.5, 0.5};
    pi.fallback = {0.5, 0.5};
    pi.validate(m.n_actions);
    return env;
}

namespace {

// grid actions: 0 up, 1 down, 2 left, 3 right
constexpr int kGridActions = 4;
constexpr int kDx[kGridActions] = {0, 0, -1, 1};
constexpr int kDy[kGridActions] = {-1, 1, 0, 0};

int move_cell(int cell, int action, int w, int h) {
    int x = cell % w, y = cell / w;
    int nx = x + kDx[action], ny = y + kDy[action];
    if (nx < 0 || nx >= w || ny < 0 || ny >= h) return cell;
    return ny * w + nx;
}

int shortest_path_action(int cell, int goal, int w) {
    int x = cell % w, y = cell / w;
    int gx = goal % w, gy = goal / w;
    if (x < gx) return 3;
    if (x > gx) return 2;
    if (y < gy) return 1;
    if (y > gy) return 0;
    return 0;
}

} // namespace

std::vector<Env> build_gridworld(const GridworldConfig& cfg) {
    if (cfg.width < 2 || cfg.height < 2)
        throw config_error("gridworld: dimensions must be >= 2");
    if (!(cfg.slip_prob >= 0.0 && cfg.slip_prob <= 0.5))
        throw config_error("gridworld: slip_prob must lie in [0, 0.5]");
    if (cfg.n_tasks < 1) throw config_error("gridworld: n_tasks must be >= 1");
    if (cfg.horizon < 2) throw config_error("gridworld: horizon must be >= 2");
    if (!(cfg.epsilon >= 0.0 && cfg.epsilon <= 1.0))
        throw config_error("gridworld: epsilon must lie in [0, 1]");
    if (!(cfg.policy_flaw_prob >= 0.0 && cfg.policy_flaw_prob <= 1.0))
        throw config_error("gridworld: policy_flaw_prob must lie in [0, 1]");

    const int w = cfg.width, h = cfg.height;
    const int n_cells = w * h;
    const int done = n_cells;
    const int obs_cols = cfg.aliased ? (w + 1) / 2 : w;

    std::vector<Env> envs;
    envs.reserve(cfg.n_tasks);
    const int family_goal = static_cast<int>(Rng(cfg.seed).uniform_int(n_cells));
    for (int task = 0; task < cfg.n_tasks; ++task) {
        Rng rng = Rng::stream(cfg.seed, static_cast<std::uint64_t>(task));
        int goal = cfg.shared_goal ? family_goal : static_cast<int>(rng.uniform_int(n_cells));
        if (cfg.shared_goal) rng.uniform_int(n_cells); // keep task streams aligned

        // start cells within a feasible but non-trivial distance of the goal
        int max_dist = std::min(cfg.horizon - 1, w + h - 2);
        auto dist_to_goal = [&](int cell) {
            return std::abs(cell % w - goal % w) + std::abs(cell / w - goal / w);
        };
        std::vector<int> starts;
        for (int c = 0; c < n_cells; ++c) {
            int d = dist_to_goal(c);
            if (d >= 2 && d <= max_dist) starts.push_back(c);
        }
        if (starts.empty())
            for (int c = 0; c < n_cells; ++c)
                if (c != goal) starts.push_back(c);

        Env env;
        TabularPOMDP& m = env.pomdp;
        m.name = "grid" + std::to_string(cfg.seed) + "_t" + std::to_string(task);
        m.n_states = n_cells + 1;
        m.n_obs = obs_cols * h;
        m.n_actions = kGridActions;
        m.horizon = cfg.horizon;
        m.transition.assign(static_cast<std::size_t>(m.n_states) * kGridActions,
                            std::vector<double>(m.n_states, 0.0));
        m.observation.assign(m.n_states, std::vector<double>(m.n_obs, 0.0));
        m.reward.assign(static_cast<std::size_t>(m.n_states) * kGridActions, 0.0);
        m.terminal_reward.assign(m.n_states, 0.0);
        m.initial_state_dist.assign(m.n_states, 0.0);

        for (int c = 0; c < n_cells; ++c) {
            int col = cfg.aliased ? (c % w) / 2 : c % w;
            m.observation[c][(c / w) * obs_cols + col] = 1.0;
        }
        // the absorbed episode keeps emitting the goal position, so logs do
        // not carry an explicit completion marker
        m.observation[done] = m.observation[goal];

        for (int a = 0; a < kGridActions; ++a) {
            m.transition[static_cast<std::size_t>(done) * kGridActions + a][done] = 1.0;
            // acting at the goal pays once and absorbs
            m.transition[static_cast<std::size_t>(goal) * kGridActions + a][done] = 1.0;
            m.reward[static_cast<std::size_t>(goal) * kGridActions + a] = 1.0;
        }
        for (int c = 0; c < n_cells; ++c) {
            if (c == goal) continue;
            for (int a = 0; a < kGridActions; ++a) {
                auto& dist = m.transition[static_cast<std::size_t>(c) * kGridActions + a];
                dist[move_cell(c, a, w, h)] += 1.0 - cfg.slip_prob;
                for (int b = 0; b < kGridActions; ++b) {
                    if (b == a) continue;
                    dist[move_cell(c, b, w, h)] += cfg.slip_prob / 3.0;
                }
            }
        }

        if (cfg.random_start) {
            for (int c : starts)
                m.initial_state_dist[c] = 1.0 / static_cast<double>(starts.size());
        } else {
            m.initial_state_dist[starts[static_cast<int>(rng.uniform_int(starts.size()))]] = 1.0;
        }
        m.validate();

        TabularPolicy& pi = env.policy;
        pi.keying = TabularPolicy::Keying::last_observation;
        pi.fallback.assign(kGridActions, 1.0 / kGridActions);
        for (int o = 0; o < m.n_obs; ++o) {
            // representative cell of the (possibly aliased) observation group
            int row = o / obs_cols, col = o % obs_cols;
            int cell = row * w + (cfg.aliased ? col * 2 : col);
            int preferred = shortest_path_action(cell, goal, w);
            if (rng.uniform01() < cfg.policy_flaw_prob) {
                int wrong = static_cast<int>(rng.uniform_int(kGridActions - 1));
                preferred = wrong >= preferred ? wrong + 1 : wrong;
            }
            std::vector<double> dist(kGridActions, cfg.epsilon / kGridActions);
            dist[preferred] += 1.0 - cfg.epsilon;
            pi.table[std::to_string(o)] = std::move(dist);
        }
        pi.validate(m.n_actions);
        envs.push_back(std::move(env));
    }
    return envs;
}

Dataset simulate(const Env& env, int n, const SimulateOptions& opt, std::uint64_t seed) {
    if (n < 1) throw invalid_argument_error("simulate: n must be >= 1");
    env.pomdp.validate();
    env.policy.validate(env.pomdp.n_actions);
    const TabularPOMDP& m = env.pomdp;

    bool zero_terminal = true;
    for (double r : m.terminal_reward)
        if (r != 0.0) zero_terminal = false;

    Dataset out;
    for (int i = 0; i < n; ++i) {
        Rng rng = Rng::stream(seed, static_cast<std::uint64_t>(i));
        Rollout r;
        r.task_id = m.name;

        int s = rng.categorical(m.initial_state_dist);
        History h;
        h.push_observation(rng.categorical(m.observation[s]));

        double total = 0.0;
        std::string actions_meta;
        for (int t = 1; t <= m.horizon; ++t) {
            const std::vector<double>& dist = env.policy.action_dist(h);
            int a = rng.categorical(dist);
            double rew = m.rew(s, a);
            StepRecord step;
            step.features.assign(m.n_obs, 0.0);
            step.features[h.observations.back()] = 1.0;
            step.chosen_probs = {dist[a]};
            step.entropies = {env.policy.entropy(h)};
            step.reward = rew;
            r.steps.push_back(std::move(step));
            if (!actions_meta.empty()) actions_meta += ',';
            actions_meta += std::to_string(a);
            total += rew;

            s = rng.categorical(m.trans(s, a));
            if (opt.stop_when_labeled && total >= opt.threshold) break;
            if (t < m.horizon) {
                h.push_action(a, rew);
                h.push_observation(rng.categorical(m.observation[s]));
            }
        }
        total += m.terminal_reward[s];
        r.label = total >= opt.threshold ? 1 : 0;
        r.meta["actions"] = actions_meta;
        if (zero_terminal) r.meta["threshold"] = format_reward(opt.threshold);
        out.add(std::move(r));
    }
    return out;
}

namespace {

// Per-state results of the backward pass at one history node.
struct NodeResult {
    std::vector<int> support;
    std::vector<double> future_reward; // E[rewards from this step on | state]
    std::vector<double> success;       // P(total return reaches threshold | state)
};

struct OracleBuilder {
    const TabularPOMDP& m;
    const TabularPolicy& pi;
    double threshold;
    std::size_t budget;
    OracleTables out;

    // h: history with t observations; belief: unnormalized P(h, s_t = s)
    // over `support`; acc: reward already collected along h.
    NodeResult process(History& h, const std::vector<int>& support,
                       const std::vector<double>& belief, double acc) {
        if (++out.history_count > budget)
            throw budget_error("exact_q: history budget exceeded after " +
                               std::to_string(out.history_count) + " histories");
        const int t = h.steps_observed();
        const std::string key = h.key();
        const std::vector<double>& action_probs = pi.action_dist(h);

        NodeResult res;
        res.support = support;
        res.future_reward.assign(support.size(), 0.0);
        res.success.assign(support.size(), 0.0);

        // per-state, per-action expectations
        std::vector<std::vector<double>> wq(support.size(), std::vector<double>(m.n_actions, 0.0));
        std::vector<std::vector<double>> gq(support.size(), std::vector<double>(m.n_actions, 0.0));

        for (int a = 0; a < m.n_actions; ++a) {
            if (t == m.horizon) {
                // final decision; only the terminal reward remains
                for (std::size_t si = 0; si < support.size(); ++si) {
                    int s = support[si];
                    double rew = m.rew(s, a);
                    const std::vector<double>& tr = m.trans(s, a);
                    double v = rew, g = 0.0;
                    for (int s2 = 0; s2 < m.n_states; ++s2) {
                        if (tr[s2] == 0.0) continue;
                        v += tr[s2] * m.terminal_reward[s2];
                        if (acc + rew + m.terminal_reward[s2] >= threshold) g += tr[s2];
                    }
                    wq[si][a] = v;
                    gq[si][a] = g;
                }
                continue;
            }
            for (std::size_t si = 0; si < support.size(); ++si)
                wq[si][a] = m.rew(support[si], a);
            if (action_probs[a] == 0.0) {
                // unreachable branch under pi; q keeps only the immediate
                // reward instead of growing the enumeration off-policy
                continue;
            }
            // group support states by their (deterministic) reward
            std::vector<double> reward_values;
            for (std::size_t si = 0; si < support.size(); ++si) {
                double rew = m.rew(support[si], a);
                if (std::find(reward_values.begin(), reward_values.end(), rew) == reward_values.end())
                    reward_values.push_back(rew);
            }
            for (double rew : reward_values) {
                // next-state mass for this (a, r) branch
                std::vector<double> next_mass(m.n_states, 0.0);
                for (std::size_t si = 0; si < support.size(); ++si) {
                    if (m.rew(support[si], a) != rew) continue;
                    const std::vector<double>& tr = m.trans(support[si], a);
                    for (int s2 = 0; s2 < m.n_states; ++s2) next_mass[s2] += belief[si] * tr[s2];
                }
                for (int x2 = 0; x2 < m.n_obs; ++x2) {
                    std::vector<int> child_support;
                    std::vector<double> child_belief;
                    for (int s2 = 0; s2 < m.n_states; ++s2) {
                        double mass = next_mass[s2] * m.observation[s2][x2];
                        if (mass > 0.0) {
                            child_support.push_back(s2);
                            child_belief.push_back(mass);
                        }
                    }
                    if (child_support.empty()) continue;
                    h.push_action(a, rew);
                    h.push_observation(x2);
                    NodeResult child = process(h, child_support, child_belief, acc + rew);
                    h.observations.pop_back();
                    h.actions.pop_back();
                    h.rewards.pop_back();

                    // fold child values back per originating state
                    std::vector<double> child_w(m.n_states, 0.0), child_g(m.n_states, 0.0);
                    for (std::size_t ci = 0; ci < child.support.size(); ++ci) {
                        child_w[child.support[ci]] = child.future_reward[ci];
                        child_g[child.support[ci]] = child.success[ci];
                    }
                    for (std::size_t si = 0; si < support.size(); ++si) {
                        if (m.rew(support[si], a) != rew) continue;
                        const std::vector<double>& tr = m.trans(support[si], a);
                        for (int s2 = 0; s2 < m.n_states; ++s2) {
                            double p = tr[s2] * m.observation[s2][x2];
                            if (p == 0.0) continue;
                            wq[si][a] += p * child_w[s2];
                            gq[si][a] += p * child_g[s2];
                        }
                    }
                }
            }
        }

        for (std::size_t si = 0; si < support.size(); ++si) {
            for (int a = 0; a < m.n_actions; ++a) {
                res.future_reward[si] += action_probs[a] * wq[si][a];
                res.success[si] += action_probs[a] * gq[si][a];
            }
        }

        // belief-averaged public tables
        double mass = 0.0;
        for (double b : belief) mass += b;
        std::vector<double> q(m.n_actions, 0.0);
        double v = 0.0, sp = 0.0;
        for (std::size_t si = 0; si < support.size(); ++si) {
            double w = belief[si] / mass;
            for (int a = 0; a < m.n_actions; ++a) q[a] += w * wq[si][a];
            v += w * res.future_reward[si];
            sp += w * res.success[si];
        }
        out.q_values[key] = std::move(q);
        out.value[key] = v;
        out.success_posterior[key] = sp;
        return res;
    }
};

} // namespace

OracleTables exact_q(const Env& env, double threshold, std::size_t history_budget) {
    env.pomdp.validate();
    env.policy.validate(env.pomdp.n_actions);
    const TabularPOMDP& m = env.pomdp;

    OracleBuilder builder{m, env.policy, threshold, history_budget, {}};
    builder.out.threshold = threshold;
    builder.out.horizon = m.horizon;

    double prior_success = 0.0, prior_value = 0.0;
    for (int x1 = 0; x1 < m.n_obs; ++x1) {
        std::vector<int> support;
        std::vector<double> belief;
        for (int s = 0; s < m.n_states; ++s) {
            double mass = m.initial_state_dist[s] * m.observation[s][x1];
            if (mass > 0.0) {
                support.push_back(s);
                belief.push_back(mass);
            }
        }
        if (support.empty()) continue;
        History h;
        h.push_observation(x1);
        NodeResult root = builder.process(h, support, belief, 0.0);
        for (std::size_t si = 0; si < support.size(); ++si) {
            prior_success += belief[si] * root.success[si];
            prior_value += belief[si] * root.future_reward[si];
        }
    }
    builder.out.success_posterior[""] = prior_success;
    builder.out.value[""] = prior_value;
    return builder.out;
}

LookaheadResult one_step_lookahead(const TabularPOMDP& env, int state, int action, Rng& rng) {
    if (state < 0 || state >= env.n_states || action < 0 || action >= env.n_actions)
        throw invalid_argument_error("one_step_lookahead: state/action out of range");
    LookaheadResult r;
    r.reward = env.rew(state, action);
    r.next_state = rng.categorical(env.trans(state, action));
    r.next_observation = rng.categorical(env.observation[r.next_state]);
    return r;
}

History history_from_rollout(const Rollout& r, int t) {
    if (t < 1 || t > r.length())
        throw invalid_argument_error("history_from_rollout: step index out of range");
    auto it = r.meta.find("actions");
    if (it == r.meta.end())
        throw data_error("rollout carries no action sequence in meta[\"actions\"]");
    std::vector<int> actions;
    std::stringstream ss(it->second);
    std::string tok;
    while (std::getline(ss, tok, ','))
        actions.push_back(std::stoi(tok));
    if (actions.size() != r.steps.size())
        throw data_error("meta action count disagrees with step count");

    History h;
    for (int j = 0; j < t; ++j) {
        const std::vector<double>& f = r.steps[j].features;
        int obs = static_cast<int>(std::max_element(f.begin(), f.end()) - f.begin());
        h.push_observation(obs);
        if (j + 1 < t) h.push_action(actions[j], r.steps[j].reward);
    }
    return h;
}

std::vector<double> oracle_scores(const OracleTables& tables, const Rollout& r) {
    const History full = history_from_rollout(r, r.length());
    std::vector<double> scores;
    scores.reserve(r.steps.size());
    History prefix;
    for (int t = 1; t <= r.length(); ++t) {
        prefix.push_observation(full.observations[t - 1]);
        auto found = tables.success_posterior.find(prefix.key());
        if (found == tables.success_posterior.end())
            throw data_error("oracle has no entry for history '" + prefix.key() + "'");
        scores.push_back(found->second);
        if (t < r.length()) prefix.push_action(full.actions[t - 1], full.rewards[t - 1]);
    }
    return scores;
}

} // namespace tdcal
