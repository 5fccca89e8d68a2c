/* C interface to the tdcal library: success-predictor calibration for
 * episodic tasks, with conformal early stopping and guided action search.
 * All functions return a status code; tdcal_last_error() describes the most
 * recent failure on the calling thread. Handles are opaque and owned by the
 * caller via the matching *_free function. */

#ifndef TDCAL_H
#define TDCAL_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define TDCAL_API __declspec(dllexport)
#else
#define TDCAL_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum tdcal_status {
    TDCAL_OK = 0,
    TDCAL_ERR_INTERNAL = 1,
    TDCAL_ERR_CONFIG = 2,
    TDCAL_ERR_DATA = 3,
    TDCAL_ERR_NUMERIC = 4,
    TDCAL_ERR_IO = 5,
    TDCAL_ERR_INVALID = 6,
    TDCAL_ERR_BUDGET = 7
} tdcal_status;

typedef struct tdcal_dataset tdcal_dataset;
typedef struct tdcal_env tdcal_env;
typedef struct tdcal_predictor tdcal_predictor;
typedef struct tdcal_band tdcal_band;
typedef struct tdcal_oracle tdcal_oracle;

TDCAL_API const char* tdcal_version(void);
TDCAL_API const char* tdcal_last_error(void);

/* Runs one command (gen | train | eval | band | stop-sim | search | export)
 * against a config file; overrides are "key=value" strings applied on top. */
TDCAL_API tdcal_status tdcal_run(const char* command, const char* config_path,
                                 const char* const* overrides, size_t n_overrides);

/* ---- datasets (JSONL rollout files) ---- */

TDCAL_API tdcal_status tdcal_dataset_load(const char* path, tdcal_dataset** out);
TDCAL_API tdcal_status tdcal_dataset_save(const tdcal_dataset* d, const char* path);
TDCAL_API void tdcal_dataset_free(tdcal_dataset* d);
TDCAL_API size_t tdcal_dataset_size(const tdcal_dataset* d);
TDCAL_API size_t tdcal_dataset_task_count(const tdcal_dataset* d);

/* Seeded task-level split; outputs are freshly allocated datasets. */
TDCAL_API tdcal_status tdcal_dataset_split(const tdcal_dataset* d, uint64_t seed,
                                           int unseen_tasks, double train_fraction,
                                           tdcal_dataset** train, tdcal_dataset** val_seen,
                                           tdcal_dataset** val_unseen);

/* ---- environments ---- */

TDCAL_API tdcal_status tdcal_env_example1(tdcal_env** out);

/* config_kv: newline-separated key=value pairs ("seed", "env.kind" and the
 * env.* keys documented in the README); task_index selects one task of the
 * generated family. */
TDCAL_API tdcal_status tdcal_env_gridworld(const char* config_kv, size_t task_index,
                                           tdcal_env** out);
TDCAL_API void tdcal_env_free(tdcal_env* env);

TDCAL_API tdcal_status tdcal_env_simulate(const tdcal_env* env, int n, double threshold,
                                          uint64_t seed, tdcal_dataset** out);

/* Exact success posterior / Q tables by backward induction. Fails with
 * TDCAL_ERR_BUDGET when the history count exceeds the budget. */
TDCAL_API tdcal_status tdcal_env_oracle(const tdcal_env* env, double threshold, size_t budget,
                                        tdcal_oracle** out);
TDCAL_API void tdcal_oracle_free(tdcal_oracle* o);
TDCAL_API tdcal_status tdcal_oracle_prior_success(const tdcal_oracle* o, double* out);

/* ---- predictors ---- */

/* kind: "feedforward" or "recurrent" */
TDCAL_API tdcal_status tdcal_predictor_create(const char* kind, int input_dim, int hidden,
                                              int window, uint64_t seed, tdcal_predictor** out);
TDCAL_API tdcal_status tdcal_predictor_load(const char* path, tdcal_predictor** out);
TDCAL_API tdcal_status tdcal_predictor_save(const tdcal_predictor* p, const char* path);
TDCAL_API void tdcal_predictor_free(tdcal_predictor* p);

/* Success score of rollout `rollout` (0-based) at step `step` (1-based). */
TDCAL_API tdcal_status tdcal_predictor_score(const tdcal_predictor* p, const tdcal_dataset* d,
                                             size_t rollout, int step, double* out);

/* config_kv: "seed" plus the train.* keys; val may be NULL. */
TDCAL_API tdcal_status tdcal_train(tdcal_predictor* p, const tdcal_dataset* train,
                                   const tdcal_dataset* val, const char* config_kv);

/* ---- metrics ---- */

TDCAL_API tdcal_status tdcal_sequential_brier(const tdcal_predictor* p, const tdcal_dataset* d,
                                              double quantile, double* out);

/* ---- conformal band / early stopping ---- */

/* Fits on the failure scores of the successful rollouts in `successes`. */
TDCAL_API tdcal_status tdcal_band_fit(const tdcal_predictor* p, const tdcal_dataset* successes,
                                      double alpha, uint64_t split_seed, tdcal_band** out);
TDCAL_API tdcal_status tdcal_band_load(const char* path, tdcal_band** out);
TDCAL_API tdcal_status tdcal_band_save(const tdcal_band* b, const char* path);
TDCAL_API void tdcal_band_free(tdcal_band* b);

/* Threshold delta_t at a 1-based step; steps past the horizon reuse the
 * final threshold. */
TDCAL_API tdcal_status tdcal_band_threshold(const tdcal_band* b, int step, double* out);

/* First 1-based step whose failure score exceeds the band, 0 when none. */
TDCAL_API tdcal_status tdcal_band_first_crossing(const tdcal_band* b,
                                                 const double* failure_scores, size_t n,
                                                 int* out);

#ifdef __cplusplus
}
#endif

#endif
