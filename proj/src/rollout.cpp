#include "rollout.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "rng.hpp"

namespace tdcal {

using nlohmann::json;

namespace {

constexpr int kSchemaVersion = 1;
constexpr double kTopKSumTolerance = 1e-6;

} // namespace

const char* static_method_name(StaticMethod m) {
    switch (m) {
    case StaticMethod::max_prob: return "max_prob";
    case StaticMethod::avg_prob: return "avg_prob";
    case StaticMethod::running_avg_prob: return "running_avg_prob";
    case StaticMethod::avg_entropy: return "avg_entropy";
    case StaticMethod::running_avg_entropy: return "running_avg_entropy";
    }
    return "?";
}

StaticMethod static_method_from_name(const std::string& name) {
    if (name == "max_prob") return StaticMethod::max_prob;
    if (name == "avg_prob") return StaticMethod::avg_prob;
    if (name == "running_avg_prob") return StaticMethod::running_avg_prob;
    if (name == "avg_entropy") return StaticMethod::avg_entropy;
    if (name == "running_avg_entropy") return StaticMethod::running_avg_entropy;
    throw config_error("unknown static method '" + name + "'");
}

void validate_rollout(const Rollout& r, const std::string& where) {
    if (r.steps.empty())
        throw data_error(where + ": rollout must have at least one step");
    if (r.label != 0 && r.label != 1)
        throw data_error(where + ": label must be 0 or 1");
    if (r.task_id.empty())
        throw data_error(where + ": task_id must be non-empty");
    for (std::size_t t = 0; t < r.steps.size(); ++t) {
        const StepRecord& s = r.steps[t];
        std::string at = where + ", step " + std::to_string(t + 1);
        if (s.features.empty())
            throw data_error(at + ": field 'features' is required");
        for (double f : s.features)
            if (!std::isfinite(f)) throw data_error(at + ": non-finite feature");
        if (!std::isfinite(s.reward))
            throw data_error(at + ": non-finite reward");
        for (double p : s.chosen_probs)
            if (!(p > 0.0 && p <= 1.0))
                throw data_error(at + ": field 'chosen_probs' must lie in (0,1]");
        for (double h : s.entropies)
            if (!(h >= 0.0) || !std::isfinite(h))
                throw data_error(at + ": field 'entropies' must be non-negative");
        if (s.top_k_probs) {
            for (const auto& row : *s.top_k_probs) {
                double sum = 0.0;
                for (std::size_t i = 0; i < row.size(); ++i) {
                    if (i + 1 < row.size() && row[i] < row[i + 1])
                        throw data_error(at + ": field 'top_k_probs' rows must be sorted descending");
                    sum += row[i];
                }
                if (sum > 1.0 + kTopKSumTolerance)
                    throw data_error(at + ": field 'top_k_probs' row sums above 1");
            }
        }
    }
    // When a threshold is declared, the label must agree with the rewards.
    auto it = r.meta.find("threshold");
    if (it != r.meta.end()) {
        double c = 0.0;
        try {
            c = std::stod(it->second);
        } catch (...) {
            throw data_error(where + ": meta threshold '" + it->second + "' is not numeric");
        }
        if (r.label != label_from_rewards(r, c))
            throw data_error(where + ": label disagrees with reward threshold");
    }
}

void validate_dataset(const Dataset& d) {
    if (d.rollouts.empty()) throw data_error("dataset is empty");
    for (std::size_t i = 0; i < d.rollouts.size(); ++i) {
        validate_rollout(d.rollouts[i], "rollout " + std::to_string(i));
        if (!d.task_ids.count(d.rollouts[i].task_id))
            throw data_error("rollout " + std::to_string(i) + ": task_id not registered in dataset");
    }
}

namespace {

json step_to_json(const StepRecord& s) {
    json j;
    j["features"] = s.features;
    j["reward"] = s.reward;
    if (!s.chosen_probs.empty()) j["chosen_probs"] = s.chosen_probs;
    if (!s.entropies.empty()) j["entropies"] = s.entropies;
    if (s.top_k_probs) j["top_k_probs"] = *s.top_k_probs;
    return j;
}

StepRecord step_from_json(const json& j, const std::string& where) {
    StepRecord s;
    if (!j.contains("features"))
        throw data_error(where + ": field 'features' is required");
    s.features = j.at("features").get<std::vector<double>>();
    if (!j.contains("reward"))
        throw data_error(where + ": field 'reward' is required");
    s.reward = j.at("reward").get<double>();
    if (j.contains("chosen_probs")) s.chosen_probs = j.at("chosen_probs").get<std::vector<double>>();
    if (j.contains("entropies")) s.entropies = j.at("entropies").get<std::vector<double>>();
    if (j.contains("top_k_probs"))
        s.top_k_probs = j.at("top_k_probs").get<std::vector<std::vector<double>>>();
    return s;
}

} // namespace

Dataset load_rollouts(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open '" + path + "' for reading");
    Dataset d;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::string where = path + ":" + std::to_string(lineno);
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw data_error(where + ": parse error: " + e.what());
        }
        try {
            Rollout r;
            int v = j.value("v", kSchemaVersion);
            if (v != kSchemaVersion)
                throw data_error(where + ": unsupported schema version " + std::to_string(v));
            r.task_id = j.at("task_id").get<std::string>();
            r.label = j.at("label").get<int>();
            for (const auto& js : j.at("steps"))
                r.steps.push_back(step_from_json(js, where));
            if (j.contains("meta"))
                r.meta = j.at("meta").get<std::map<std::string, std::string>>();
            validate_rollout(r, where);
            d.add(std::move(r));
        } catch (const json::exception& e) {
            throw data_error(where + ": " + e.what());
        }
    }
    if (d.rollouts.empty()) throw data_error(path + ": no rollouts found");
    return d;
}

void save_rollouts(const Dataset& d, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw io_error("cannot open '" + path + "' for writing");
    for (const Rollout& r : d.rollouts) {
        json j;
        j["v"] = kSchemaVersion;
        j["task_id"] = r.task_id;
        j["label"] = r.label;
        json steps = json::array();
        for (const StepRecord& s : r.steps) steps.push_back(step_to_json(s));
        j["steps"] = std::move(steps);
        if (!r.meta.empty()) j["meta"] = r.meta;
        out << j.dump() << '\n';
    }
    if (!out) throw io_error("write failed for '" + path + "'");
}

TaskSplit split_by_task(const Dataset& d, const SplitSpec& spec) {
    validate_dataset(d);
    if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0))
        throw config_error("train_fraction must lie in (0,1)");
    if (spec.unseen_task_count < 0)
        throw config_error("unseen_task_count must be non-negative");
    std::vector<std::string> tasks(d.task_ids.begin(), d.task_ids.end());
    if (static_cast<std::size_t>(spec.unseen_task_count) >= tasks.size())
        throw config_error("unseen_task_count (" + std::to_string(spec.unseen_task_count) +
                           ") must be smaller than the task count (" + std::to_string(tasks.size()) + ")");

    Rng rng(spec.seed);
    rng.shuffle(tasks);
    std::set<std::string> unseen(tasks.begin(), tasks.begin() + spec.unseen_task_count);

    TaskSplit out;
    for (const std::string& task : tasks) {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < d.rollouts.size(); ++i)
            if (d.rollouts[i].task_id == task) idx.push_back(i);
        if (unseen.count(task)) {
            for (std::size_t i : idx) out.val_unseen.add(d.rollouts[i]);
            continue;
        }
        // Stratify by label so single-class training shards only occur when
        // the task itself is single-class.
        std::vector<std::size_t> groups[2];
        for (std::size_t i : idx) groups[d.rollouts[i].label].push_back(i);
        for (auto& group : groups) {
            if (group.empty()) continue;
            rng.shuffle(group);
            std::size_t n_train = static_cast<std::size_t>(
                std::llround(spec.train_fraction * static_cast<double>(group.size())));
            n_train = std::min(n_train, group.size());
            for (std::size_t k = 0; k < group.size(); ++k) {
                if (k < n_train)
                    out.train.add(d.rollouts[group[k]]);
                else
                    out.val_seen.add(d.rollouts[group[k]]);
            }
        }
    }
    return out;
}

int label_from_rewards(const Rollout& r, double c) {
    double total = 0.0;
    for (const StepRecord& s : r.steps) total += s.reward;
    return total >= c ? 1 : 0;
}

namespace {

double avg_neg_log_prob(const StepRecord& s, const std::string& at) {
    if (s.chosen_probs.empty()) throw data_error(at + ": method requires chosen_probs");
    double sum = 0.0;
    for (double p : s.chosen_probs) sum += -std::log(p);
    return sum / static_cast<double>(s.chosen_probs.size());
}

double avg_entropy(const StepRecord& s, const std::string& at) {
    if (s.entropies.empty()) throw data_error(at + ": method requires entropies");
    double sum = 0.0;
    for (double h : s.entropies) sum += h;
    return sum / static_cast<double>(s.entropies.size());
}

} // namespace

double static_score(const Rollout& r, StaticMethod method, int t) {
    if (t < 1 || t > r.length())
        throw invalid_argument_error("static_score: step index out of range");
    const std::string at = "step " + std::to_string(t);
    switch (method) {
    case StaticMethod::max_prob: {
        const StepRecord& s = r.steps[t - 1];
        if (s.chosen_probs.empty()) throw data_error(at + ": method requires chosen_probs");
        double best = 0.0;
        for (double p : s.chosen_probs) best = std::max(best, -std::log(p));
        return best;
    }
    case StaticMethod::avg_prob:
        return avg_neg_log_prob(r.steps[t - 1], at);
    case StaticMethod::running_avg_prob: {
        double sum = 0.0;
        for (int j = 1; j <= t; ++j)
            sum += avg_neg_log_prob(r.steps[j - 1], "step " + std::to_string(j));
        return sum / static_cast<double>(t);
    }
    case StaticMethod::avg_entropy:
        return avg_entropy(r.steps[t - 1], at);
    case StaticMethod::running_avg_entropy: {
        double sum = 0.0;
        for (int j = 1; j <= t; ++j)
            sum += avg_entropy(r.steps[j - 1], "step " + std::to_string(j));
        return sum / static_cast<double>(t);
    }
    }
    throw invalid_argument_error("static_score: unknown method");
}

int time_quantile_index(int horizon, double q) {
    if (horizon < 1) throw invalid_argument_error("time_quantile_index: horizon must be >= 1");
    if (!(q >= 0.0 && q <= 1.0)) throw invalid_argument_error("time_quantile_index: q must lie in [0,1]");
    // nudge guards against 0.2 * 10 = 2.0000000000000004-style rounding
    int idx = static_cast<int>(std::ceil(q * static_cast<double>(horizon) - 1e-9));
    return std::clamp(idx, 1, horizon);
}

} // namespace tdcal
