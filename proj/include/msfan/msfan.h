/* C interface to the MSFAN library.
 *
 * Opaque handles plus integer status codes. Every function that can fail
 * returns msfan_status; msfan_last_error() describes the most recent failure
 * on the calling thread. Out-parameters are written only on MSFAN_OK.
 */
#ifndef MSFAN_MSFAN_H
#define MSFAN_MSFAN_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum msfan_status {
    MSFAN_OK = 0,
    MSFAN_ERR_INTERNAL = 1,
    MSFAN_ERR_CONFIG = 2,
    MSFAN_ERR_DATA = 3,
    MSFAN_ERR_NUMERIC = 4
} msfan_status;

/* Message for the most recent error on this thread; empty string if none. */
const char* msfan_last_error(void);

/* ------------------------------------------------------------------ */
/* Run configuration (generator + trainer), flat key=value format.    */

typedef struct msfan_config msfan_config;

msfan_status msfan_config_create(msfan_config** out);
msfan_status msfan_config_load(const char* path, msfan_config** out);
msfan_status msfan_config_set(msfan_config* cfg, const char* key, const char* value);
/* Copies the value into buf (NUL-terminated, truncating if needed). */
msfan_status msfan_config_get(const msfan_config* cfg, const char* key, char* buf, size_t buf_len);
msfan_status msfan_config_validate(const msfan_config* cfg);
void msfan_config_free(msfan_config* cfg);

/* ------------------------------------------------------------------ */
/* Datasets.                                                           */

typedef struct msfan_dataset msfan_dataset;

msfan_status msfan_dataset_generate(const msfan_config* cfg, msfan_dataset** out);
/* Writes <stem>.csv and <stem>.eval.csv. */
msfan_status msfan_dataset_save(const msfan_dataset* ds, const char* stem);
msfan_status msfan_dataset_load(const char* stem, msfan_dataset** out);
msfan_status msfan_dataset_info(const msfan_dataset* ds, uint32_t* n_sources, uint32_t* n_classes,
                                uint32_t* input_dim, uint64_t* n_samples);
void msfan_dataset_free(msfan_dataset* ds);

/* ------------------------------------------------------------------ */
/* Training, evaluation, checkpoints.                                  */

typedef struct msfan_model msfan_model;

/* Runs the full training loop. metrics_path may be NULL; otherwise one JSON
 * object per metrics record is written to that file. */
msfan_status msfan_train(const msfan_config* cfg, const msfan_dataset* ds,
                         const char* metrics_path, msfan_model** out);
msfan_status msfan_model_save(const msfan_model* model, const char* path);
msfan_status msfan_model_load(const char* path, msfan_model** out);
void msfan_model_free(msfan_model* model);

/* Target accuracy under max-similarity and ensemble inference. */
msfan_status msfan_evaluate(const msfan_model* model, const msfan_dataset* ds,
                            double* acc_max_similarity, double* acc_ensemble);

/* Supervised-only run (all adaptation losses off), ensemble accuracy. */
msfan_status msfan_baseline(const msfan_config* cfg, const msfan_dataset* ds, double* accuracy);

/* Cumulative component pipeline; fills accuracies[0..4]. */
#define MSFAN_ABLATION_STAGES 5
msfan_status msfan_ablation(const msfan_config* cfg, const msfan_dataset* ds, double* accuracies);
const char* msfan_ablation_stage_name(int stage);

/* ------------------------------------------------------------------ */
/* Gradient checks.                                                    */

/* Compares analytic gradients of every loss against finite differences.
 * Writes a human-readable report into report (NUL-terminated, truncating) and
 * the worst relative error into max_rel_err (either may be NULL). Returns
 * MSFAN_OK when every loss passes the 1e-4 tolerance, MSFAN_ERR_NUMERIC
 * otherwise. inject_fault != 0 corrupts the gradients on purpose. */
msfan_status msfan_gradient_check(uint64_t seed, int inject_fault, char* report, size_t report_len,
                                  double* max_rel_err);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* MSFAN_MSFAN_H */
