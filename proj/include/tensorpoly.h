/*
 * Copyright (c) 2026 tensorpoly authors
 * SPDX-License-Identifier: Apache-2.0
 *
 * C API for the tensorpoly shared library.
 *
 * Conventions:
 *   - every function returns a tp_status (TP_OK == 0 on success);
 *   - out-parameters are written only on success;
 *   - tp_last_error() returns a thread-local message for the last failure;
 *   - objects behind opaque handles are created/destroyed by matching
 *     *_create / *_free (or *_open / *_close) pairs;
 *   - strings returned through char** are heap-allocated, release them with
 *     tp_string_free().
 */

#ifndef TENSORPOLY_H
#define TENSORPOLY_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef int tp_status;

enum {
    TP_OK = 0,
    TP_EINVAL = 1,   /* invalid argument / bad configuration */
    TP_ENUMERIC = 2, /* numerical failure (divergence, NaN, failed check) */
    TP_EIO = 3,      /* file I/O failure */
    TP_ECONTRACT = 4 /* protocol violation (budget mismatch, missing forward) */
};

const char* tp_status_str(tp_status status);
const char* tp_last_error(void);
const char* tp_version(void);

/* ------------------------------------------------------------------------
 * Closed-form accounting.
 * ---------------------------------------------------------------------- */

/* Least q with q^n >= d. */
tp_status tp_min_base(int64_t d, int n, int64_t* q_out);

/* Per-layer parameter count for a method ("fullft", "lora", "tlora",
 * "tlora-vector", "poly", "tp1", "tp2", "tpx") and phase ("pretrain" or
 * "finetune"). Pass -1 for arguments the method does not use. */
tp_status tp_param_count(const char* method, const char* phase, int64_t d, int r, int n,
                         int tensor_rank, int64_t tasks, int modules, int64_t* count_out);

/* Extra multiplications of a TLoRA materialization over plain LoRA. */
tp_status tp_flop_extra(int64_t d, int64_t r, int64_t tensor_rank, int64_t* flops_out);

/* ------------------------------------------------------------------------
 * Verification suites.
 * ---------------------------------------------------------------------- */

typedef struct tp_gradcheck_result {
    char variant[16];
    double max_rel_err;
    double tolerance;
    int pass;
    char worst[96]; /* name and index of the worst coordinate */
} tp_gradcheck_result;

/* Finite-difference check of one variant ("lora", "tlora", "poly", "tp1",
 * "tp2", "tpx") at tensor order `order`. */
tp_status tp_gradcheck_one(const char* variant, int order, uint64_t seed, double tolerance,
                           tp_gradcheck_result* result_out);

/* All six variants; writes up to `capacity` results and the total count.
 * Returns TP_ENUMERIC if any variant fails the tolerance. */
tp_status tp_gradcheck_all(uint64_t seed, double tolerance, tp_gradcheck_result* results,
                           size_t capacity, size_t* count_out);

typedef struct tp_oracle_result {
    char name[32];
    long long cases;
    double max_err;
    int pass;
} tp_oracle_result;

/* Randomized brute-force equivalence suites (cases instances per suite half,
 * integer-exact plus float-tolerance). Returns TP_ENUMERIC on any failure. */
tp_status tp_oracle_all(uint64_t seed, long long cases, tp_oracle_result* results,
                        size_t capacity, size_t* count_out);

/* ------------------------------------------------------------------------
 * Experiments (opaque handle).
 * ---------------------------------------------------------------------- */

typedef struct tp_experiment tp_experiment;

tp_status tp_experiment_create(tp_experiment** exp_out);
tp_status tp_experiment_load_config(tp_experiment* exp, const char* path);
/* Applies one "key" = "value" override (same keys as the config file). */
tp_status tp_experiment_set(tp_experiment* exp, const char* key, const char* value);
/* Writes the effective configuration; release with tp_string_free. */
tp_status tp_experiment_echo_config(tp_experiment* exp, char** text_out);

/* Multi-task pretraining: writes config.txt, metrics.jsonl, timing.jsonl and
 * pretrained.tpck into out_dir. */
tp_status tp_experiment_pretrain(tp_experiment* exp, const char* out_dir);
/* Few-shot adaptation of a checkpoint over the generated test tasks. */
tp_status tp_experiment_adapt(tp_experiment* exp, const char* checkpoint_path,
                              const char* out_dir);
/* Full grid (methods x modes x seeds). Returns TP_ENUMERIC if any cell
 * failed; per-cell status lands in <out_dir>/cells.txt. */
tp_status tp_experiment_run_suite(tp_experiment* exp, const char* out_dir);

void tp_experiment_free(tp_experiment* exp);

/* Re-aggregates a run directory into a summary table. */
tp_status tp_report_render(const char* run_dir, char** text_out);

void tp_string_free(char* text);

/* ------------------------------------------------------------------------
 * Checkpoints (opaque handle).
 * ---------------------------------------------------------------------- */

typedef struct tp_checkpoint tp_checkpoint;

tp_status tp_checkpoint_open(const char* path, tp_checkpoint** ckpt_out);
tp_status tp_checkpoint_method(tp_checkpoint* ckpt, char* buffer, size_t capacity);
/* dims_out[8]: d_in, d_out, r, N, R, q_in, q_out, layer count. */
tp_status tp_checkpoint_dims(tp_checkpoint* ckpt, int64_t dims_out[8]);
void tp_checkpoint_close(tp_checkpoint* ckpt);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* TENSORPOLY_H */
