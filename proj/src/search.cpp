#include "search.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace tdcal {

namespace {

constexpr double kArgmaxTau = 1e-6;

} // namespace

SuccessScorer oracle_scorer(const OracleTables& tables) {
    return [&tables](const History& h, int action) {
        // lookahead from the final decision step lands one observation past
        // the horizon; the return is fully collected there
        if (h.steps_observed() > tables.horizon)
            return std::clamp(h.reward_sum(), 0.0, 1.0);
        auto it = tables.q_values.find(h.key());
        if (it == tables.q_values.end())
            throw data_error("oracle has no entry for history '" + h.key() + "'");
        if (action < 0 || action >= static_cast<int>(it->second.size()))
            throw invalid_argument_error("oracle_scorer: action out of range");
        // sparse-binary returns: P(success | h, a) is the collected reward
        // plus the remaining action value
        double p = h.reward_sum() + it->second[action];
        return std::clamp(p, 0.0, 1.0);
    };
}

SuccessScorer predictor_scorer(const Predictor& f, int n_obs) {
    return [&f, n_obs](const History& h, int) {
        Rollout r;
        r.task_id = "live";
        r.steps.reserve(h.observations.size());
        for (std::size_t t = 0; t < h.observations.size(); ++t) {
            StepRecord s;
            s.features.assign(n_obs, 0.0);
            s.features[h.observations[t]] = 1.0;
            s.reward = t < h.rewards.size() ? h.rewards[t] : 0.0;
            r.steps.push_back(std::move(s));
        }
        double score = f.forward(r, r.length());
        return f.accumulate_mode ? uncertainty_to_success(score) : score;
    };
}

int sample_with_temperature(std::span<const double> probs, double tau, Rng& rng) {
    if (!(tau > 0.0)) throw invalid_argument_error("sample_with_temperature: tau must be positive");
    double max_log = -std::numeric_limits<double>::infinity();
    for (double p : probs)
        if (p > 0.0) max_log = std::max(max_log, std::log(p));
    if (max_log == -std::numeric_limits<double>::infinity())
        throw invalid_argument_error("sample_with_temperature: zero-support distribution");
    if (tau <= kArgmaxTau) {
        int best = 0;
        for (int a = 1; a < static_cast<int>(probs.size()); ++a)
            if (probs[a] > probs[best]) best = a;
        return best;
    }
    std::vector<double> weights(probs.size(), 0.0);
    for (std::size_t i = 0; i < probs.size(); ++i)
        if (probs[i] > 0.0) weights[i] = std::exp((std::log(probs[i]) - max_log) / tau);
    return rng.categorical(weights);
}

SearchDecision guided_action_search(const Env& env, int state, const History& history,
                                    const SuccessScorer& f, const SearchConfig& cfg,
                                    Rng& search_rng) {
    if (cfg.samples < 1) throw config_error("guided_action_search: samples must be >= 1");
    if (!(cfg.temperature > 0.0))
        throw config_error("guided_action_search: temperature must be positive");
    const int greedy = env.policy.greedy_action(history);
    double failure_confidence = 1.0 - f(history, greedy);
    if (failure_confidence <= cfg.threshold) return {greedy, false};

    const std::vector<double>& dist = env.policy.action_dist(history);
    int best_action = -1;
    double best_score = -std::numeric_limits<double>::infinity();
    History scratch = history;
    for (int i = 0; i < cfg.samples; ++i) {
        int candidate = sample_with_temperature(dist, cfg.temperature, search_rng);
        LookaheadResult look = one_step_lookahead(env.pomdp, state, candidate, search_rng);
        scratch.push_action(candidate, look.reward);
        scratch.push_observation(look.next_observation);
        int next_greedy = env.policy.greedy_action(scratch);
        double score = f(scratch, next_greedy);
        scratch.observations.pop_back();
        scratch.actions.pop_back();
        scratch.rewards.pop_back();
        if (score > best_score) { // strict: ties keep the lowest index
            best_score = score;
            best_action = candidate;
        }
    }
    return {best_action, true};
}

EpisodeStats run_episode(const Env& env, double threshold, ActionMode mode,
                         const SuccessScorer& f, const SearchConfig& cfg, Rng& env_rng,
                         Rng& search_rng) {
    const TabularPOMDP& m = env.pomdp;
    int s = env_rng.categorical(m.initial_state_dist);
    History h;
    h.push_observation(env_rng.categorical(m.observation[s]));

    EpisodeStats stats;
    double total = 0.0;
    for (int t = 1; t <= m.horizon; ++t) {
        int a = 0;
        switch (mode) {
        case ActionMode::policy_sample: a = env_rng.categorical(env.policy.action_dist(h)); break;
        case ActionMode::greedy: a = env.policy.greedy_action(h); break;
        case ActionMode::guided: {
            SearchDecision d = guided_action_search(env, s, h, f, cfg, search_rng);
            a = d.action;
            if (d.searched) ++stats.searched_steps;
            break;
        }
        }
        double r = m.rew(s, a);
        total += r;
        stats.length = t;
        s = env_rng.categorical(m.trans(s, a));
        if (total >= threshold) {
            stats.label = 1;
            return stats;
        }
        if (t < m.horizon) {
            h.push_action(a, r);
            h.push_observation(env_rng.categorical(m.observation[s]));
        }
    }
    total += m.terminal_reward[s];
    stats.label = total >= threshold ? 1 : 0;
    return stats;
}

std::vector<SearchExperimentRow> run_search_experiment(std::span<const Env> envs,
                                                       const SuccessScorer& f,
                                                       std::span<const SearchConfig> grid,
                                                       int episodes_per_task, double threshold,
                                                       std::uint64_t seed) {
    if (envs.empty()) throw invalid_argument_error("run_search_experiment: no environments");
    if (episodes_per_task < 1)
        throw invalid_argument_error("run_search_experiment: episodes_per_task must be >= 1");

    std::vector<SearchExperimentRow> rows;
    for (std::size_t e = 0; e < envs.size(); ++e) {
        auto run_mode = [&](ActionMode mode, const SearchConfig& cfg) {
            SearchExperimentRow row;
            row.task = envs[e].pomdp.name;
            row.mode = mode == ActionMode::greedy ? "greedy" : "search";
            row.samples = mode == ActionMode::guided ? cfg.samples : 0;
            row.temperature = mode == ActionMode::guided ? cfg.temperature : 0.0;
            row.threshold = mode == ActionMode::guided ? cfg.threshold : 0.0;
            row.episodes = episodes_per_task;
            double succ = 0.0, len = 0.0, searched = 0.0;
            for (int ep = 0; ep < episodes_per_task; ++ep) {
                std::uint64_t base = e * 1000003ULL + static_cast<std::uint64_t>(ep) * 2ULL;
                Rng env_rng = Rng::stream(seed, base);
                Rng search_rng = Rng::stream(seed, base + 1);
                EpisodeStats st = run_episode(envs[e], threshold, mode, f, cfg, env_rng, search_rng);
                succ += st.label;
                len += st.length;
                searched += st.searched_steps;
            }
            row.success_rate = succ / episodes_per_task;
            row.mean_length = len / episodes_per_task;
            row.mean_searched_steps = searched / episodes_per_task;
            rows.push_back(row);
        };
        run_mode(ActionMode::greedy, SearchConfig{});
        for (const SearchConfig& cfg : grid) run_mode(ActionMode::guided, cfg);
    }
    return rows;
}

} // namespace tdcal
