/*
 * Copyright 2026 The revsde Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

/*
 * C interface to librevsde.
 *
 * Every function returns an rsde_status. On failure the message is available
 * from rsde_last_error() until the next failing call on the same thread.
 * Handles are opaque; each *_create has a matching *_destroy, which accepts
 * NULL. A handle must not be used from two threads at once.
 *
 * Array layouts: states are batch x state_dim, Brownian increments are
 * batch x dims, diffusion matrices are state_dim x noise_dim row-major.
 */

#ifndef REVSDE_H
#define REVSDE_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define RSDE_API __declspec(dllexport)
#else
#define RSDE_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum rsde_status {
  RSDE_OK = 0,
  RSDE_INVALID_ARGUMENT = 1,
  RSDE_OUT_OF_RANGE = 2,
  RSDE_NUMERICAL_ERROR = 3,
  RSDE_MEMORY_LIMIT = 4,
  RSDE_IO_ERROR = 5,
  RSDE_UNSUPPORTED = 6,
  RSDE_INTERNAL_ERROR = 7
} rsde_status;

typedef enum rsde_method {
  RSDE_REVERSIBLE_HEUN = 0,
  RSDE_MIDPOINT = 1,
  RSDE_HEUN = 2,
  RSDE_EULER_MARUYAMA = 3
} rsde_method;

typedef enum rsde_gradient_kind {
  RSDE_GRAD_REVERSIBLE_ADJOINT = 0, /* reversible Heun backward pass */
  RSDE_GRAD_CONTINUOUS_ADJOINT = 1, /* midpoint or Heun adjoint SDE */
  RSDE_GRAD_UNROLLED = 2            /* tape through the solver (oracle) */
} rsde_gradient_kind;

RSDE_API const char* rsde_version(void);
RSDE_API const char* rsde_last_error(void);
RSDE_API const char* rsde_status_string(rsde_status status);

/* Brownian sources ------------------------------------------------------- */

typedef struct rsde_brownian rsde_brownian;

typedef struct rsde_tree_stats {
  size_t node_count;
  size_t queries;
  size_t cache_hits;
  size_t cache_misses;
  size_t traverse_edges;
  size_t max_traverse_edges;
  size_t max_miss_chain;
  size_t nodes_returned;
} rsde_tree_stats;

RSDE_API rsde_status rsde_brownian_interval_create(double horizon, size_t dims, size_t batch,
                                                   uint64_t seed, size_t cache_capacity,
                                                   rsde_brownian** out);
/* tolerance <= 0 selects 2^-16 * horizon. */
RSDE_API rsde_status rsde_virtual_tree_create(double horizon, size_t dims, size_t batch,
                                              uint64_t seed, double tolerance, rsde_brownian** out);
/* W_t - W_s into out[batch * dims]. */
RSDE_API rsde_status rsde_brownian_increment(rsde_brownian* source, double s, double t, double* out,
                                             size_t out_len);
/* Brownian Interval only. */
RSDE_API rsde_status rsde_brownian_prebuild(rsde_brownian* source, double step_estimate,
                                            size_t cache_size);
RSDE_API rsde_status rsde_brownian_stats(const rsde_brownian* source, rsde_tree_stats* out);
RSDE_API void rsde_brownian_destroy(rsde_brownian* source);

/* Vector fields ---------------------------------------------------------- */

typedef struct rsde_field rsde_field;

/* Single hidden layer, LipSwish hidden activation. Final activations:
 * "identity", "lipswish", "tanh" or "sigmoid". */
RSDE_API rsde_status rsde_field_create_mlp(size_t state_dim, size_t noise_dim, size_t hidden_width,
                                           const char* drift_final, const char* diffusion_final,
                                           uint64_t seed, rsde_field** out);
/* mu = A z (a: state_dim^2), sigma = B (b: state_dim * noise_dim). */
RSDE_API rsde_status rsde_field_create_linear(size_t state_dim, size_t noise_dim, const double* a,
                                              const double* b, rsde_field** out);
RSDE_API rsde_status rsde_field_load_manifest(const char* path, rsde_field** out);
RSDE_API rsde_status rsde_field_save_manifest(const rsde_field* field, const char* path);
RSDE_API rsde_status rsde_field_dims(const rsde_field* field, size_t* state_dim, size_t* noise_dim,
                                     size_t* param_count);
RSDE_API rsde_status rsde_field_get_params(const rsde_field* field, double* out, size_t len);
RSDE_API rsde_status rsde_field_set_params(rsde_field* field, const double* values, size_t len);
/* MLP fields only. */
RSDE_API rsde_status rsde_field_clip_weights(rsde_field* field);
RSDE_API void rsde_field_destroy(rsde_field* field);

/* Solves ----------------------------------------------------------------- */

/* Terminal state into z_out[batch * state_dim]; horizon must be a multiple of step. */
RSDE_API rsde_status rsde_solve(const rsde_field* field, rsde_brownian* noise, rsde_method method,
                                double step, double horizon, const double* z0, size_t batch,
                                double* z_out);

/* Gradient of <loss_cotangent, z_T> with respect to z0 and the field parameters.
 * grad_z0 has batch * state_dim entries, grad_params has param_count entries. */
RSDE_API rsde_status rsde_gradient(const rsde_field* field, rsde_brownian* noise, rsde_method method,
                                   rsde_gradient_kind kind, double step, double horizon,
                                   const double* z0, size_t batch, const double* loss_cotangent,
                                   double* grad_z0, double* grad_params);

typedef struct rsde_stability_result {
  double max_z;
  double max_zhat;
  int bounded;
  size_t steps_run;
} rsde_stability_result;

RSDE_API rsde_status rsde_stability_probe(double re, double im, size_t n_steps,
                                          rsde_stability_result* out);

/* Experiments ------------------------------------------------------------ */

typedef struct rsde_experiment rsde_experiment;
typedef struct rsde_report rsde_report;

/* name: gradient-error, convergence, brownian-bench, stability, fit-toy. */
RSDE_API rsde_status rsde_experiment_create(const char* name, rsde_experiment** out);
/* Keys match the CLI flag names without the leading dashes. */
RSDE_API rsde_status rsde_experiment_set(rsde_experiment* experiment, const char* key,
                                         const char* value);
RSDE_API rsde_status rsde_experiment_load_file(rsde_experiment* experiment, const char* path);
/* Runs and, when "out" is set, writes the CSV there. */
RSDE_API rsde_status rsde_experiment_run(const rsde_experiment* experiment, rsde_report** out);
RSDE_API void rsde_experiment_destroy(rsde_experiment* experiment);

/* Strings stay valid until rsde_report_destroy. */
RSDE_API const char* rsde_report_csv(const rsde_report* report);
RSDE_API const char* rsde_report_summary(const rsde_report* report);
RSDE_API int rsde_report_passed(const rsde_report* report);
RSDE_API size_t rsde_report_check_count(const rsde_report* report);
RSDE_API rsde_status rsde_report_check(const rsde_report* report, size_t index, const char** name,
                                       int* passed, const char** detail);
RSDE_API void rsde_report_destroy(rsde_report* report);

#ifdef __cplusplus
}
#endif

#endif /* REVSDE_H */
