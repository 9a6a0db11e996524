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

#ifndef REVSDE_SOLVERS_HPP
#define REVSDE_SOLVERS_HPP

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "revsde/brownian.hpp"
#include "revsde/errors.hpp"
#include "revsde/fields.hpp"

namespace revsde {

enum class Method { reversible_heun, midpoint, heun, euler_maruyama };

const char* to_string(Method m) noexcept;
Method method_from_string(const std::string& name);

/**
 * Solver state for a batch of independent paths sharing one field.
 * z, zhat and mu are batch x state_dim; sigma is batch x (state_dim x noise_dim),
 * each path's block row-major. Baseline methods only use t and z.
 */
struct RevHeunState {
  double t = 0.0;
  std::size_t batch = 1;
  std::vector<double> z;
  std::vector<double> zhat;
  std::vector<double> mu;
  std::vector<double> sigma;
};

/// Cotangents with the same layout as RevHeunState; d_params is summed over the batch.
struct CotangentState {
  std::vector<double> d_z;
  std::vector<double> d_zhat;
  std::vector<double> d_mu;
  std::vector<double> d_sigma;
  std::vector<double> d_params;

  static CotangentState zeros(const VectorField& field, std::size_t batch);
};

struct Gradients {
  std::vector<double> z0;      // batch x state_dim
  std::vector<double> params;  // param_count, summed over the batch
};

/**
 * Fixed-step grid t_n = T * (n / N). The horizon must be an integer multiple
 * of `step` (to 1e-9 relative); `noise` must cover [0, horizon] with a batch
 * matching the solve.
 */
struct SolveConfig {
  Method method = Method::reversible_heun;
  double step = 0.0;
  double horizon = 1.0;
  BrownianSource* noise = nullptr;
  bool store_trajectory = false;

  std::size_t steps() const;
  double time(std::size_t n) const;
};

/// One row per grid time: (t_n, z_n) for every path.
struct Trajectory {
  std::vector<double> times;
  std::vector<std::vector<double>> states;
};

struct SolveResult {
  RevHeunState state;
  Trajectory trajectory;  // empty unless store_trajectory
};

/// Extra loss cotangents on z_n: pairs (n, batch x state_dim). Index N is the terminal state.
using CotangentSchedule = std::vector<std::pair<std::size_t, std::vector<double>>>;

/// (t, z0, z0, mu(t, z0), sigma(t, z0)); one drift and one diffusion evaluation per path.
RevHeunState initial_state(const VectorField& field, double t, std::span<const double> z0,
                           std::size_t batch);

/**
 * Reversible Heun forward step, in place. Exactly one drift and one diffusion
 * evaluation per path. `dw` is batch x noise_dim. Throws NumericalError on a
 * non-finite result, reporting `step_index`.
 */
void revheun_step_forward(const VectorField& field, RevHeunState& state, double dt,
                          std::span<const double> dw, std::size_t step_index = 0);

struct BackwardOptions {
  bool verify_round_trip = false;
  double round_trip_tolerance = 1e-12;
};

/**
 * Reversible Heun backward step, in place: reconstructs the previous state in
 * closed form and maps the cotangents of the next state onto it, accumulating
 * parameter gradients. With verification enabled the reconstruction is
 * stepped forward again and compared against the input state.
 */
void revheun_step_backward(const VectorField& field, RevHeunState& state, CotangentState& cot,
                           double dt, std::span<const double> dw, std::size_t step_index = 0,
                           const BackwardOptions& options = {});

/// Reconstruction only (no cotangents).
void revheun_step_reverse(const VectorField& field, RevHeunState& state, double dt,
                          std::span<const double> dw, std::size_t step_index = 0);

/// Midpoint, Heun or Euler-Maruyama step on state.z, in place.
void baseline_step(Method method, const VectorField& field, RevHeunState& state, double dt,
                   std::span<const double> dw, std::size_t step_index = 0);

/// Steps an existing state to the horizon with config.method.
void integrate(const VectorField& field, RevHeunState& state, const SolveConfig& config,
               Trajectory* trajectory = nullptr);

/// Solve from z0 (batch x state_dim) with config.method.
SolveResult solve(const VectorField& field, std::span<const double> z0, const SolveConfig& config);

/// Reversible Heun solve; config.method is ignored.
SolveResult revheun_solve(const VectorField& field, std::span<const double> z0,
                          const SolveConfig& config);

/**
 * Backward pass from a terminal reversible Heun state. Cotangent entries at
 * index N seed the terminal cotangent; other entries are added when the pass
 * reaches that grid time. When `adjoint_path` is non-null it receives dL/dz_n
 * for n = 0..N, where for n > 0 this includes only loss terms at indices >= n.
 */
Gradients revheun_backward(const VectorField& field, const RevHeunState& terminal,
                           const SolveConfig& config, const CotangentSchedule& schedule,
                           const BackwardOptions& options = {},
                           std::vector<std::vector<double>>* adjoint_path = nullptr);

/// Forward solve plus backward pass; memory independent of the number of steps.
Gradients revheun_adjoint_solve(const VectorField& field, std::span<const double> z0,
                                const SolveConfig& config, std::span<const double> loss_cotangent,
                                const BackwardOptions& options = {},
                                std::vector<std::vector<double>>* adjoint_path = nullptr);

Gradients revheun_adjoint_solve(const VectorField& field, std::span<const double> z0,
                                const SolveConfig& config, const CotangentSchedule& schedule,
                                const BackwardOptions& options = {});

/**
 * Optimise-then-discretise: solves the forward problem with `method` (midpoint
 * or Heun), then integrates (Z, A, dL/dtheta) backwards from T with the same
 * method and the same Brownian increments negated. adjoint_path receives A at
 * each grid time when non-null.
 */
Gradients continuous_adjoint_solve(Method method, const VectorField& field,
                                   std::span<const double> z0, const SolveConfig& config,
                                   std::span<const double> loss_cotangent,
                                   std::vector<std::vector<double>>* adjoint_path = nullptr);

struct UnrolledOptions {
  std::size_t memory_limit_bytes = std::size_t{1} << 30;
};

/**
 * Discretise-then-optimise oracle: records every operation of the solve with
 * config.method on a tape and reverse-accumulates. Memory is O(N); exceeding
 * memory_limit_bytes throws MemoryLimitError.
 */
Gradients unrolled_backprop(const VectorField& field, std::span<const double> z0,
                            const SolveConfig& config, const CotangentSchedule& schedule,
                            const UnrolledOptions& options = {});

Gradients unrolled_backprop(const VectorField& field, std::span<const double> z0,
                            const SolveConfig& config, std::span<const double> loss_cotangent,
                            const UnrolledOptions& options = {});

/// sum |a - b| / max(sum |a|, sum |b|) over the concatenation of z0 and parameter gradients.
double relative_l1_error(const Gradients& a, const Gradients& b);

struct StabilityResult {
  double max_z = 0.0;     // max |z_n|
  double max_zhat = 0.0;  // max |zhat_n|
  bool bounded = true;
  std::size_t steps_run = 0;
};

/**
 * Reversible Heun with h = 1 on y' = lambda y, y0 = 1, lambda = re + i im
 * realised as the 2x2 rotation-scaling [[re, -im], [im, re]]. `bounded` means
 * both maxima stay within 10x the initial modulus; the run stops early once
 * that fails.
 */
StabilityResult stability_probe(double re, double im, std::size_t n_steps);

/// CSV with header "t,z0,z1,..." (path-major columns p{p}_z{i} when batch > 1).
void write_trajectory_csv(const Trajectory& trajectory, std::size_t batch, std::size_t state_dim,
                          std::ostream& os);

}  // namespace revsde

#endif  // REVSDE_SOLVERS_HPP
