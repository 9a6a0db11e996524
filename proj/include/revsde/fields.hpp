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

#ifndef REVSDE_FIELDS_HPP
#define REVSDE_FIELDS_HPP

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "revsde/prng.hpp"

namespace revsde {

/**
 * Drift mu(t, z) in R^x and diffusion sigma(t, z) in R^{x x w} of a
 * Stratonovich SDE, with vector-Jacobian products.
 *
 * The diffusion is stored row-major: entry (i, k) at index i * w + k.
 *
 * VJP convention: `cot_z` (length x) is overwritten with c^T d(out)/dz;
 * `cot_params` is either empty or has param_count() entries and is
 * accumulated into (+=).
 */
class VectorField {
 public:
  virtual ~VectorField() = default;

  virtual std::size_t state_dim() const noexcept = 0;
  virtual std::size_t noise_dim() const noexcept = 0;
  virtual std::size_t param_count() const noexcept { return 0; }
  /// True when w == x and sigma is diagonal (only sigma_ii may be nonzero).
  virtual bool diagonal_noise() const noexcept { return false; }

  virtual void drift(double t, std::span<const double> z, std::span<double> out) const = 0;
  virtual void diffusion(double t, std::span<const double> z, std::span<double> out) const = 0;

  virtual void drift_vjp(double t, std::span<const double> z, std::span<const double> cot,
                         std::span<double> cot_z, std::span<double> cot_params) const = 0;
  virtual void diffusion_vjp(double t, std::span<const double> z, std::span<const double> cot,
                             std::span<double> cot_z, std::span<double> cot_params) const = 0;

  virtual std::span<const double> params() const noexcept { return {}; }
  virtual void set_params(std::span<const double> values);

  /**
   * For diagonal-noise fields: d sigma_ii / dz_i and d^2 sigma_ii / dz_i^2.
   * Returns false if second derivatives are unavailable.
   */
  virtual bool diagonal_diffusion_derivatives(double t, std::span<const double> z,
                                              std::span<double> first,
                                              std::span<double> second) const;

  std::size_t diffusion_size() const noexcept { return state_dim() * noise_dim(); }
};

// ---------------------------------------------------------------------------
// Activations

/// rho(x) = 0.909 x sigmoid(x).
double lipswish(double x) noexcept;
double lipswish_derivative(double x) noexcept;
double sigmoid(double x) noexcept;

enum class Activation { identity, lipswish, tanh, sigmoid };

const char* to_string(Activation a) noexcept;
Activation activation_from_string(const std::string& name);

// ---------------------------------------------------------------------------
// MLP

/**
 * Fully connected network. Layer l maps widths[l] -> widths[l+1] with
 * weight matrix W_l (row-major, out x in) followed by a bias. Hidden layers
 * use `hidden`; the output layer uses `final`.
 *
 * Flat parameter layout: for each layer, W_l then b_l.
 */
class Mlp {
 public:
  Mlp(std::vector<std::size_t> widths, Activation hidden = Activation::lipswish,
      Activation final = Activation::identity);

  std::size_t in_dim() const noexcept { return widths_.front(); }
  std::size_t out_dim() const noexcept { return widths_.back(); }
  std::size_t layer_count() const noexcept { return widths_.size() - 1; }
  std::size_t param_count() const noexcept { return params_.size(); }
  const std::vector<std::size_t>& widths() const noexcept { return widths_; }
  Activation hidden_activation() const noexcept { return hidden_; }
  Activation final_activation() const noexcept { return final_; }

  std::span<const double> params() const noexcept { return params_; }
  std::span<double> params() noexcept { return params_; }

  std::span<double> weights(std::size_t layer);
  std::span<double> bias(std::size_t layer);
  std::span<const double> weights(std::size_t layer) const;
  std::span<const double> bias(std::size_t layer) const;

  /// U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
  void init_uniform(const SeedState& seed);

  void forward(std::span<const double> input, std::span<double> out) const;
  std::vector<double> forward(std::span<const double> input) const;

  /// cot_in overwritten with d<cot, f>/d input; cot_params accumulated when non-empty.
  void vjp(std::span<const double> input, std::span<const double> cot, std::span<double> cot_in,
           std::span<double> cot_params) const;

  /// Clips every weight of a layer with fan-in b to [-1/b, 1/b]; biases untouched.
  void clip_weights() noexcept;

 private:
  std::size_t weight_offset(std::size_t layer) const noexcept { return offsets_[layer]; }
  std::size_t bias_offset(std::size_t layer) const noexcept {
    return offsets_[layer] + widths_[layer] * widths_[layer + 1];
  }

  std::vector<std::size_t> widths_;
  Activation hidden_;
  Activation final_;
  std::vector<std::size_t> offsets_;
  std::vector<double> params_;
};

/**
 * Neural SDE field: mu = drift_net([z, t]), sigma = reshape(diffusion_net([z, t]), x, w).
 * Time is appended to the state as the last input coordinate.
 * Parameters: drift network first, then diffusion network.
 */
class NeuralSdeField final : public VectorField {
 public:
  NeuralSdeField(std::size_t state_dim, std::size_t noise_dim, Mlp drift_net, Mlp diffusion_net);

  /// Single hidden layer of the given width on both networks.
  static NeuralSdeField make(std::size_t state_dim, std::size_t noise_dim, std::size_t hidden_width,
                             Activation drift_final, Activation diffusion_final,
                             const SeedState& seed);

  std::size_t state_dim() const noexcept override { return state_dim_; }
  std::size_t noise_dim() const noexcept override { return noise_dim_; }
  std::size_t param_count() const noexcept override { return params_.size(); }

  void drift(double t, std::span<const double> z, std::span<double> out) const override;
  void diffusion(double t, std::span<const double> z, std::span<double> out) const override;
  void drift_vjp(double t, std::span<const double> z, std::span<const double> cot,
                 std::span<double> cot_z, std::span<double> cot_params) const override;
  void diffusion_vjp(double t, std::span<const double> z, std::span<const double> cot,
                     std::span<double> cot_z, std::span<double> cot_params) const override;

  std::span<const double> params() const noexcept override { return params_; }
  void set_params(std::span<const double> values) override;

  const Mlp& drift_net() const noexcept { return drift_; }
  const Mlp& diffusion_net() const noexcept { return diffusion_; }
  void clip_weights() noexcept;

 private:
  void sync_from_nets();
  void sync_to_nets();
  void net_vjp(const Mlp& net, std::size_t offset, double t, std::span<const double> z,
               std::span<const double> cot, std::span<double> cot_z,
               std::span<double> cot_params) const;

  std::size_t state_dim_;
  std::size_t noise_dim_;
  Mlp drift_;
  Mlp diffusion_;
  std::vector<double> params_;
};

/// Plain-text manifest (shapes, activations, then one parameter per line).
void save_manifest(const NeuralSdeField& field, std::ostream& os);
NeuralSdeField load_manifest(std::istream& is);

/**
 * mu(z) = A z, sigma(z) = B (additive noise). Parameters: A (x x x, row-major)
 * then B (x x w).
 */
class LinearField final : public VectorField {
 public:
  LinearField(std::size_t state_dim, std::size_t noise_dim, std::vector<double> a,
              std::vector<double> b);

  std::size_t state_dim() const noexcept override { return state_dim_; }
  std::size_t noise_dim() const noexcept override { return noise_dim_; }
  std::size_t param_count() const noexcept override { return params_.size(); }

  void drift(double t, std::span<const double> z, std::span<double> out) const override;
  void diffusion(double t, std::span<const double> z, std::span<double> out) const override;
  void drift_vjp(double t, std::span<const double> z, std::span<const double> cot,
                 std::span<double> cot_z, std::span<double> cot_params) const override;
  void diffusion_vjp(double t, std::span<const double> z, std::span<const double> cot,
                     std::span<double> cot_z, std::span<double> cot_params) const override;

  std::span<const double> params() const noexcept override { return params_; }
  void set_params(std::span<const double> values) override;

 private:
  std::size_t state_dim_;
  std::size_t noise_dim_;
  std::vector<double> params_;
};

/**
 * Channel-wise field with diagonal noise: mu_i = f(t, z_i), sigma_ii = g(t, z_i).
 * Derivatives are supplied by the caller; `g_second` may be empty.
 */
class ElementwiseField final : public VectorField {
 public:
  using Scalar = std::function<double(double t, double z)>;

  struct Functions {
    Scalar f;
    Scalar f_prime;
    Scalar g;
    Scalar g_prime;
    Scalar g_second;
  };

  ElementwiseField(std::size_t dim, Functions fns);

  std::size_t state_dim() const noexcept override { return dim_; }
  std::size_t noise_dim() const noexcept override { return dim_; }
  bool diagonal_noise() const noexcept override { return true; }

  void drift(double t, std::span<const double> z, std::span<double> out) const override;
  void diffusion(double t, std::span<const double> z, std::span<double> out) const override;
  void drift_vjp(double t, std::span<const double> z, std::span<const double> cot,
                 std::span<double> cot_z, std::span<double> cot_params) const override;
  void diffusion_vjp(double t, std::span<const double> z, std::span<const double> cot,
                     std::span<double> cot_z, std::span<double> cot_params) const override;
  bool diagonal_diffusion_derivatives(double t, std::span<const double> z, std::span<double> first,
                                      std::span<double> second) const override;

 private:
  std::size_t dim_;
  Functions fns_;
};

/// Counts evaluations of a wrapped field. Not thread-safe.
class CountingField final : public VectorField {
 public:
  explicit CountingField(VectorField& inner) : inner_(inner) {}

  std::size_t state_dim() const noexcept override { return inner_.state_dim(); }
  std::size_t noise_dim() const noexcept override { return inner_.noise_dim(); }
  std::size_t param_count() const noexcept override { return inner_.param_count(); }
  bool diagonal_noise() const noexcept override { return inner_.diagonal_noise(); }

  void drift(double t, std::span<const double> z, std::span<double> out) const override;
  void diffusion(double t, std::span<const double> z, std::span<double> out) const override;
  void drift_vjp(double t, std::span<const double> z, std::span<const double> cot,
                 std::span<double> cot_z, std::span<double> cot_params) const override;
  void diffusion_vjp(double t, std::span<const double> z, std::span<const double> cot,
                     std::span<double> cot_z, std::span<double> cot_params) const override;
  std::span<const double> params() const noexcept override { return inner_.params(); }
  void set_params(std::span<const double> values) override { inner_.set_params(values); }

  std::size_t drift_evals() const noexcept { return drift_evals_; }
  std::size_t diffusion_evals() const noexcept { return diffusion_evals_; }
  std::size_t drift_vjps() const noexcept { return drift_vjps_; }
  std::size_t diffusion_vjps() const noexcept { return diffusion_vjps_; }
  void reset() noexcept { drift_evals_ = diffusion_evals_ = drift_vjps_ = diffusion_vjps_ = 0; }

 private:
  VectorField& inner_;
  mutable std::size_t drift_evals_ = 0;
  mutable std::size_t diffusion_evals_ = 0;
  mutable std::size_t drift_vjps_ = 0;
  mutable std::size_t diffusion_vjps_ = 0;
};

/**
 * Ito -> Stratonovich conversion for diagonal noise:
 * mu_i <- mu_i - 1/2 sigma_ii d sigma_ii / dz_i. The diffusion is unchanged.
 * The drift VJP needs second derivatives of sigma from the wrapped field.
 */
class ItoCorrectedField final : public VectorField {
 public:
  explicit ItoCorrectedField(const VectorField& inner);

  std::size_t state_dim() const noexcept override { return inner_.state_dim(); }
  std::size_t noise_dim() const noexcept override { return inner_.noise_dim(); }
  std::size_t param_count() const noexcept override { return inner_.param_count(); }
  bool diagonal_noise() const noexcept override { return true; }

  void drift(double t, std::span<const double> z, std::span<double> out) const override;
  void diffusion(double t, std::span<const double> z, std::span<double> out) const override;
  void drift_vjp(double t, std::span<const double> z, std::span<const double> cot,
                 std::span<double> cot_z, std::span<double> cot_params) const override;
  void diffusion_vjp(double t, std::span<const double> z, std::span<const double> cot,
                     std::span<double> cot_z, std::span<double> cot_params) const override;
  std::span<const double> params() const noexcept override { return inner_.params(); }

 private:
  const VectorField& inner_;
};

/// Wraps a diagonal-noise Ito field as the equivalent Stratonovich field.
ItoCorrectedField ito_correction_diagonal(const VectorField& field);

// ---------------------------------------------------------------------------
// Finite-difference verification

struct FdReport {
  double max_discrepancy = 0.0;  // max over coordinates of |vjp - fd| / max(|vjp|, |fd|, floor)
  std::string worst;             // description of the worst coordinate
  bool passed = true;
};

struct FdOptions {
  double step = 1e-6;
  double tolerance = 1e-5;
  double absolute_floor = 1e-8;
  std::uint64_t seed = 0;  // random cotangents
};

/// Checks both VJPs of `field` at (t, z) against central differences in z and in every parameter.
FdReport fd_check(VectorField& field, double t, std::span<const double> z,
                  const FdOptions& options = {});

}  // namespace revsde

#endif  // REVSDE_FIELDS_HPP
