#include "tdcal.h"

#include <string>

#include "calibrate.hpp"
#include "commands.hpp"
#include "config.hpp"
#include "conformal.hpp"
#include "envsim.hpp"
#include "errors.hpp"
#include "metrics.hpp"
#include "predictor.hpp"
#include "rollout.hpp"

struct tdcal_dataset {
    tdcal::Dataset impl;
};
struct tdcal_env {
    tdcal::Env impl;
};
struct tdcal_predictor {
    std::unique_ptr<tdcal::Predictor> impl;
};
struct tdcal_band {
    tdcal::ConformalBand impl;
};
struct tdcal_oracle {
    tdcal::OracleTables impl;
};

namespace {

thread_local std::string g_last_error;

tdcal_status map_code(tdcal::ErrorCode code) {
    switch (code) {
    case tdcal::ErrorCode::config: return TDCAL_ERR_CONFIG;
    case tdcal::ErrorCode::data: return TDCAL_ERR_DATA;
    case tdcal::ErrorCode::numeric: return TDCAL_ERR_NUMERIC;
    case tdcal::ErrorCode::io: return TDCAL_ERR_IO;
    case tdcal::ErrorCode::invalid_argument: return TDCAL_ERR_INVALID;
    case tdcal::ErrorCode::budget: return TDCAL_ERR_BUDGET;
    }
    return TDCAL_ERR_INTERNAL;
}

template <typename F>
tdcal_status guarded(F&& fn) noexcept {
    try {
        fn();
        return TDCAL_OK;
    } catch (const tdcal::Error& e) {
        g_last_error = e.what();
        return map_code(e.code());
    } catch (const std::exception& e) {
        g_last_error = e.what();
        return TDCAL_ERR_INTERNAL;
    } catch (...) {
        g_last_error = "unknown error";
        return TDCAL_ERR_INTERNAL;
    }
}

tdcal_status require(bool ok, const char* what) {
    if (ok) return TDCAL_OK;
    g_last_error = what;
    return TDCAL_ERR_INVALID;
}

} // namespace

extern "C" {

const char* tdcal_version(void) { return "0.1.0"; }

const char* tdcal_last_error(void) { return g_last_error.c_str(); }

tdcal_status tdcal_run(const char* command, const char* config_path,
                       const char* const* overrides, size_t n_overrides) {
    if (auto s = require(command && config_path, "command and config_path must be non-null"))
        return s;
    return guarded([&] {
        tdcal::Config cfg = tdcal::Config::from_file(config_path);
        for (size_t i = 0; i < n_overrides; ++i) {
            if (!overrides || !overrides[i])
                throw tdcal::invalid_argument_error("null override");
            cfg.apply_override(overrides[i]);
        }
        tdcal::run_command(command, cfg);
    });
}

tdcal_status tdcal_dataset_load(const char* path, tdcal_dataset** out) {
    if (auto s = require(path && out, "path and out must be non-null")) return s;
    return guarded([&] { *out = new tdcal_dataset{tdcal::load_rollouts(path)}; });
}

tdcal_status tdcal_dataset_save(const tdcal_dataset* d, const char* path) {
    if (auto s = require(d && path, "dataset and path must be non-null")) return s;
    return guarded([&] { tdcal::save_rollouts(d->impl, path); });
}

void tdcal_dataset_free(tdcal_dataset* d) { delete d; }

size_t tdcal_dataset_size(const tdcal_dataset* d) { return d ? d->impl.size() : 0; }

size_t tdcal_dataset_task_count(const tdcal_dataset* d) { return d ? d->impl.task_ids.size() : 0; }

tdcal_status tdcal_dataset_split(const tdcal_dataset* d, uint64_t seed, int unseen_tasks,
                                 double train_fraction, tdcal_dataset** train,
                                 tdcal_dataset** val_seen, tdcal_dataset** val_unseen) {
    if (auto s = require(d && train && val_seen && val_unseen, "null argument")) return s;
    return guarded([&] {
        tdcal::SplitSpec spec{seed, unseen_tasks, train_fraction};
        tdcal::TaskSplit split = tdcal::split_by_task(d->impl, spec);
        *train = new tdcal_dataset{std::move(split.train)};
        *val_seen = new tdcal_dataset{std::move(split.val_seen)};
        *val_unseen = new tdcal_dataset{std::move(split.val_unseen)};
    });
}

tdcal_status tdcal_env_example1(tdcal_env** out) {
    if (auto s = require(out != nullptr, "out must be non-null")) return s;
    return guarded([&] { *out = new tdcal_env{tdcal::build_example1()}; });
}

tdcal_status tdcal_env_gridworld(const char* config_kv, size_t task_index, tdcal_env** out) {
    if (auto s = require(config_kv && out, "config_kv and out must be non-null")) return s;
    return guarded([&] {
        tdcal::Config cfg = tdcal::Config::from_string(config_kv);
        std::vector<tdcal::Env> envs = tdcal::envs_from_config(cfg);
        if (task_index >= envs.size())
            throw tdcal::invalid_argument_error("task_index out of range");
        *out = new tdcal_env{std::move(envs[task_index])};
    });
}

void tdcal_env_free(tdcal_env* env) { delete env; }

tdcal_status tdcal_env_simulate(const tdcal_env* env, int n, double threshold, uint64_t seed,
                                tdcal_dataset** out) {
    if (auto s = require(env && out, "env and out must be non-null")) return s;
    return guarded([&] {
        tdcal::SimulateOptions opt;
        opt.threshold = threshold;
        *out = new tdcal_dataset{tdcal::simulate(env->impl, n, opt, seed)};
    });
}

tdcal_status tdcal_env_oracle(const tdcal_env* env, double threshold, size_t budget,
                              tdcal_oracle** out) {
    if (auto s = require(env && out, "env and out must be non-null")) return s;
    return guarded([&] { *out = new tdcal_oracle{tdcal::exact_q(env->impl, threshold, budget)}; });
}

void tdcal_oracle_free(tdcal_oracle* o) { delete o; }

tdcal_status tdcal_oracle_prior_success(const tdcal_oracle* o, double* out) {
    if (auto s = require(o && out, "oracle and out must be non-null")) return s;
    return guarded([&] { *out = o->impl.success_posterior.at(""); });
}

tdcal_status tdcal_predictor_create(const char* kind, int input_dim, int hidden, int window,
                                    uint64_t seed, tdcal_predictor** out) {
    if (auto s = require(kind && out, "kind and out must be non-null")) return s;
    return guarded([&] {
        tdcal::PredictorKind k;
        std::string name(kind);
        if (name == "feedforward")
            k = tdcal::PredictorKind::feedforward;
        else if (name == "recurrent")
            k = tdcal::PredictorKind::recurrent;
        else
            throw tdcal::config_error("unknown predictor kind '" + name + "'");
        tdcal::PredictorDims dims;
        dims.input_dim = input_dim;
        dims.hidden = hidden;
        dims.window = window;
        *out = new tdcal_predictor{tdcal::make_predictor(k, dims, seed)};
    });
}

tdcal_status tdcal_predictor_load(const char* path, tdcal_predictor** out) {
    if (auto s = require(path && out, "path and out must be non-null")) return s;
    return guarded([&] { *out = new tdcal_predictor{tdcal::load_predictor(path)}; });
}

tdcal_status tdcal_predictor_save(const tdcal_predictor* p, const char* path) {
    if (auto s = require(p && path, "predictor and path must be non-null")) return s;
    return guarded([&] { tdcal::save_predictor(*p->impl, path); });
}

void tdcal_predictor_free(tdcal_predictor* p) { delete p; }

tdcal_status tdcal_predictor_score(const tdcal_predictor* p, const tdcal_dataset* d,
                                   size_t rollout, int step, double* out) {
    if (auto s = require(p && d && out, "null argument")) return s;
    return guarded([&] {
        if (rollout >= d->impl.size())
            throw tdcal::invalid_argument_error("rollout index out of range");
        *out = p->impl->forward(d->impl.rollouts[rollout], step);
    });
}

tdcal_status tdcal_train(tdcal_predictor* p, const tdcal_dataset* train, const tdcal_dataset* val,
                         const char* config_kv) {
    if (auto s = require(p && train && config_kv, "null argument")) return s;
    return guarded([&] {
        tdcal::Config cfg = tdcal::Config::from_string(config_kv);
        tdcal::TrainConfig tc = tdcal::train_config_from(cfg);
        tdcal::train(train->impl, *p->impl, tc, val ? &val->impl : nullptr);
    });
}

tdcal_status tdcal_sequential_brier(const tdcal_predictor* p, const tdcal_dataset* d,
                                    double quantile, double* out) {
    if (auto s = require(p && d && out, "null argument")) return s;
    return guarded([&] {
        std::vector<tdcal::ScoredRollout> scored = tdcal::score_with_predictor(*p->impl, d->impl);
        *out = tdcal::sequential_brier(scored, quantile);
    });
}

tdcal_status tdcal_band_fit(const tdcal_predictor* p, const tdcal_dataset* successes, double alpha,
                            uint64_t split_seed, tdcal_band** out) {
    if (auto s = require(p && successes && out, "null argument")) return s;
    return guarded([&] {
        std::vector<std::vector<double>> seqs =
            tdcal::failure_sequences(*p->impl, successes->impl, true);
        *out = new tdcal_band{tdcal::fit_band(seqs, alpha, split_seed)};
    });
}

tdcal_status tdcal_band_load(const char* path, tdcal_band** out) {
    if (auto s = require(path && out, "path and out must be non-null")) return s;
    return guarded([&] { *out = new tdcal_band{tdcal::load_band(path)}; });
}

tdcal_status tdcal_band_save(const tdcal_band* b, const char* path) {
    if (auto s = require(b && path, "band and path must be non-null")) return s;
    return guarded([&] { tdcal::save_band(b->impl, path, ""); });
}

void tdcal_band_free(tdcal_band* b) { delete b; }

tdcal_status tdcal_band_threshold(const tdcal_band* b, int step, double* out) {
    if (auto s = require(b && out, "band and out must be non-null")) return s;
    return guarded([&] { *out = b->impl.threshold_at(step); });
}

tdcal_status tdcal_band_first_crossing(const tdcal_band* b, const double* failure_scores, size_t n,
                                       int* out) {
    if (auto s = require(b && failure_scores && out, "null argument")) return s;
    return guarded([&] {
        std::optional<int> hit =
            tdcal::early_stop_step(b->impl, std::span(failure_scores, n));
        *out = hit.value_or(0);
    });
}

} // extern "C"
