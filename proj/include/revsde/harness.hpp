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

#ifndef REVSDE_HARNESS_HPP
#define REVSDE_HARNESS_HPP

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "revsde/fields.hpp"

namespace revsde {

/**
 * Settings for one experiment. Keys accepted by set() match the CLI flag
 * names: seed, out, batch, steps, paths, cache-capacity, vbt-eps, methods,
 * dims, weak-paths, weak-steps, iterations, learning-rate, repeats,
 * subintervals, spot-check-every. A value of 0 (or an empty list) selects the
 * experiment's default.
 */
struct ExperimentConfig {
  std::string experiment;
  std::uint64_t seed = 0;
  std::string out;
  std::size_t batch = 0;
  std::vector<double> steps;
  std::size_t paths = 0;
  std::vector<std::string> methods;
  std::size_t cache_capacity = 128;
  double vbt_eps = 0.0;  // 0 selects 2^-16
  std::size_t dims = 0;
  std::size_t weak_paths = 0;
  std::vector<double> weak_steps;
  std::size_t iterations = 500;
  double learning_rate = 0.01;
  std::size_t repeats = 32;
  std::vector<std::size_t> subintervals;
  std::size_t spot_check_every = 1;

  void set(const std::string& key, const std::string& value);
  /// Line-oriented "key = value"; '#' starts a comment.
  void load_file(const std::string& path);
  void load_text(const std::string& text);
  void validate() const;
};

/// Parses "0.25,2^-3,1e-2".
std::vector<double> parse_step_list(const std::string& text);

struct Check {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct Report {
  std::string csv;
  std::string summary;
  std::vector<Check> checks;
  std::vector<std::string> warnings;

  bool passed() const noexcept;
};

const std::vector<std::string>& experiment_names();

/// Dispatches on config.experiment.
Report run_experiment(const ExperimentConfig& config);

Report run_gradient_error(const ExperimentConfig& config);
Report run_convergence(const ExperimentConfig& config);
Report run_brownian_bench(const ExperimentConfig& config);
Report run_stability(const ExperimentConfig& config);
Report run_fit_toy(const ExperimentConfig& config);

/// Ordinary least squares of y on x.
struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
  double residual = 0.0;  // root mean square residual
};
LineFit fit_line(std::span<const double> x, std::span<const double> y);

/// dy = sin(y) dt + dW (scalar, additive noise).
ElementwiseField anharmonic_oscillator();
/// dy = sin(y) dt + cos(y) o dW (scalar, commutative multiplicative noise).
ElementwiseField anharmonic_cosine_noise();

/// dy_i = sin(y_i) dt on R^2 with sigma = diag(cos y_2, cos y_1) and two Brownian channels.
class CrossCosineField final : public VectorField {
 public:
  std::size_t state_dim() const noexcept override { return 2; }
  std::size_t noise_dim() const noexcept override { return 2; }

  void drift(double t, std::span<const double> z, std::span<double> out) const override;
  void diffusion(double t, std::span<const double> z, std::span<double> out) const override;
  void drift_vjp(double t, std::span<const double> z, std::span<const double> cot,
                 std::span<double> cot_z, std::span<double> cot_params) const override;
  void diffusion_vjp(double t, std::span<const double> z, std::span<const double> cot,
                     std::span<double> cot_z, std::span<double> cot_params) const override;
};

/// Mean and second moment of the time-dependent OU process dY = (rho t - kappa Y) dt + chi dW, Y_0 = 0.
struct OuMoments {
  double mean;
  double second;
};
OuMoments ou_moments(double t, double rho = 0.02, double kappa = 0.1, double chi = 0.4);

}  // namespace revsde

#endif  // REVSDE_HARNESS_HPP
