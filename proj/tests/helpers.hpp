#ifndef TDCAL_TESTS_HELPERS_HPP
#define TDCAL_TESTS_HELPERS_HPP

#include <unistd.h>

#include <filesystem>
#include <string>

#include "rng.hpp"
#include "rollout.hpp"

namespace tdcal::testing {

inline Rollout make_rollout(Rng& rng, const std::string& task, int steps, int feature_dim,
                            int label) {
    Rollout r;
    r.task_id = task;
    r.label = label;
    for (int t = 0; t < steps; ++t) {
        StepRecord s;
        for (int i = 0; i < feature_dim; ++i) s.features.push_back(rng.uniform(-1.0, 1.0));
        s.chosen_probs = {rng.uniform(0.05, 1.0)};
        s.entropies = {rng.uniform(0.0, 1.5)};
        s.reward = 0.0;
        r.steps.push_back(std::move(s));
    }
    return r;
}

inline Dataset make_dataset(Rng& rng, int tasks, int rollouts_per_task, int steps,
                            int feature_dim) {
    Dataset d;
    for (int k = 0; k < tasks; ++k) {
        for (int i = 0; i < rollouts_per_task; ++i) {
            int label = (i % 2 == 0) ? 1 : 0;
            int len = steps + static_cast<int>(rng.uniform_int(3));
            d.add(make_rollout(rng, "task" + std::to_string(k), len, feature_dim, label));
        }
    }
    return d;
}

// unique scratch directory per test binary run
inline std::string scratch_dir(const std::string& tag) {
    auto dir = std::filesystem::temp_directory_path() /
               ("tdcal_test_" + tag + "_" + std::to_string(::getpid()));
    std::filesystem::create_directories(dir);
    return dir.string();
}

} // namespace tdcal::testing

#endif
